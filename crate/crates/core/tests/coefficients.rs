mod common;

use adaeq::special::{f_coef, g_coef};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// high-precision reference values
#[test]
fn frozen_reference_values() {
    assert!(close(f_coef(30, 2).unwrap(), 0.159_814_141_177_785_36, 1e-15));
    assert!(close(f_coef(75, 2).unwrap(), 0.101_824_535_948_612_4, 1e-15));
    assert!(close(f_coef(75, 5).unwrap(), 0.386_560_555_618_781_3, 1e-15));
    assert!(close(g_coef(75, 5).unwrap(), 0.2, 1e-12));
    assert!(close(g_coef(75, 2).unwrap(), 0.5, 1e-12));
}

#[test]
fn quadrature_agrees_on_bound_grid() {
    for a in [1u32, 10, 30, 75] {
        for k in 1..=10u32 {
            assert!(close(f_coef(a, k).unwrap(), common::f_quad(a, k), 1e-10), "f({a},{k})");
            assert!(close(g_coef(a, k).unwrap(), common::g_quad(a, k), 1e-8), "g({a},{k})");
        }
    }
}

#[test]
fn single_action_closed_forms() {
    // f(1, K) = K / (K + 1)
    for k in 1..=20u32 {
        let kf = f64::from(k);
        assert!(close(f_coef(1, k).unwrap(), kf / (kf + 1.0), 1e-15));
    }
}

proptest! {
    #[test]
    fn f_is_a_probability_and_monotone(a in 1u32..400, k in 1u32..50) {
        let f = f_coef(a, k).unwrap();
        prop_assert!(f > 0.0 && f < 1.0);
        prop_assert!(f_coef(a + 1, k).unwrap() < f);
        prop_assert!(f_coef(a, k + 1).unwrap() > f);
    }

    #[test]
    fn g_stays_in_range(a in 1u32..400, m in 1u32..50) {
        let g = g_coef(a, m).unwrap();
        let mf = f64::from(m);
        prop_assert!(g > 0.0 && g * mf <= 1.0);
    }

    #[test]
    fn g_matches_quadrature(a in 1u32..120, m in 1u32..12) {
        prop_assert!(close(g_coef(a, m).unwrap(), common::g_quad(a, m), 1e-8));
    }

    #[test]
    fn f_matches_quadrature(a in 1u32..120, k in 1u32..12) {
        prop_assert!(close(f_coef(a, k).unwrap(), common::f_quad(a, k), 1e-10));
    }
}
