mod common;

use adaeq::bias::{
    mc_bias_curve, mc_bias_oracle, thm1_upper, thm2_lower, thm2_lower_from, thm2_upper_from, Thm2UpperForm, TwoDistSpec,
    UniformErrorSpec,
};
use proptest::prelude::*;

const TAUS: [f64; 6] = [0.07, 0.1, 0.4, 0.5, 0.8, 1.0];

#[test]
fn heterogeneous_frozen_values() {
    let lower = thm2_lower_from(1.0, 1.0, 75, 1.0, 2).unwrap();
    assert!((lower - 0.783_193_033_365_933).abs() < 1e-13);
    let printed = thm2_upper_from(1.0, 1.0, 75, 1.0, 5, Thm2UpperForm::Printed).unwrap();
    assert!((printed - 2.013_439_444_381_218_6).abs() < 1e-11);
    let crossing = thm2_upper_from(1.0, 1.0, 75, 1.0, 5, Thm2UpperForm::Crossing).unwrap();
    assert!((crossing - 1.013_439_444_381_218_7).abs() < 1e-11);
}

#[test]
fn monte_carlo_matches_quadrature() {
    let cases: [(&[f64], u32); 4] = [(&[0.5, 0.5, 0.4, 0.4], 30), (&[1.0, 0.07, 0.1], 75), (&[0.8; 5], 1), (&[0.1, 1.0], 10)];
    for (i, (taus, a)) in cases.iter().enumerate() {
        let spec = UniformErrorSpec::new(taus.to_vec(), *a, 1.0).unwrap();
        let m = taus.len() as u32;
        let mc = mc_bias_oracle(&spec, m, 200_000, i as u64).unwrap();
        let exact = common::exact_bias(taus, *a, 1.0);
        assert!((mc.mean - exact).abs() < 4.0 * mc.std_error, "{taus:?}: mc {} exact {exact}", mc.mean);
    }
}

#[test]
fn single_uniform_bias_is_known() {
    // max of A uniforms on [-t, t] has mean t (A - 1) / (A + 1)
    for a in [1u32, 2, 5, 30] {
        let want = 0.4 * f64::from(a - 1) / f64::from(a + 1);
        assert!((common::exact_bias(&[0.4], a, 1.0) - want).abs() < 1e-9);
    }
}

#[test]
fn curve_bias_decreases_with_size() {
    let spec = UniformErrorSpec::new(vec![0.5; 10], 10, 0.9).unwrap();
    let ms: Vec<u32> = (1..=10).collect();
    let curve = mc_bias_curve(&spec, &ms, 50_000, 3).unwrap();
    assert!(curve.windows(2).all(|w| w[1].mean < w[0].mean));
}

fn tau() -> impl Strategy<Value = f64> {
    prop::sample::select(TAUS.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_distribution_upper_bound_holds(
        t1 in tau(), t2 in tau(), k in 1u32..=2, m in 3u32..=10, a in prop::sample::select(vec![1u32, 10, 30, 75]),
    ) {
        prop_assume!(t1 > t2);
        let spec = TwoDistSpec::new(t1, t2, k, m, a, 1.0).unwrap();
        let exact = common::exact_bias(spec.to_uniform().taus(), a, 1.0);
        prop_assert!(exact <= thm1_upper(&spec).unwrap() + 1e-9);
    }

    #[test]
    fn heterogeneous_lower_bound_holds(
        taus in prop::collection::vec(tau(), 2..=10), a in prop::sample::select(vec![1u32, 10, 30, 75]),
    ) {
        let spec = UniformErrorSpec::new(taus.clone(), a, 1.0).unwrap();
        let m = taus.len() as u32;
        let exact = common::exact_bias(&taus, a, 1.0);
        prop_assert!(exact >= thm2_lower(&spec, m).unwrap() - 1e-9);
    }

    #[test]
    fn bias_is_linear_in_gamma(taus in prop::collection::vec(tau(), 1..=6), a in 1u32..40, gamma in 0.01f64..1.0) {
        let spec = UniformErrorSpec::new(taus.clone(), a, gamma).unwrap();
        let unit = UniformErrorSpec::new(taus.clone(), a, 1.0).unwrap();
        let m = taus.len() as u32;
        let scaled = mc_bias_oracle(&spec, m, 2_000, 9).unwrap().mean;
        let plain = mc_bias_oracle(&unit, m, 2_000, 9).unwrap().mean;
        prop_assert!((scaled - gamma * plain).abs() <= 1e-12 * plain.abs().max(1.0));
    }

    #[test]
    fn bias_ignores_order(mut taus in prop::collection::vec(tau(), 2..=6), a in 1u32..40) {
        let exact = common::exact_bias(&taus, a, 1.0);
        taus.reverse();
        let m = taus.len() as u32;
        let mc = mc_bias_oracle(&UniformErrorSpec::new(taus, a, 1.0).unwrap(), m, 20_000, 5).unwrap();
        prop_assert!((mc.mean - exact).abs() < 5.0 * mc.std_error);
    }
}
