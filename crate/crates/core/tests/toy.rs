use adaeq::toy::{build_ensemble, estimation_bias, fit_polynomial, proxy_min, ActionSamples, SampleScheme, ToyConfig};
use proptest::prelude::*;

#[test]
fn noiseless_even_samples_make_size_irrelevant() {
    let mut cfg = ToyConfig::default().with_tau(0.0);
    cfg.sampling = SampleScheme::Even;
    let one = estimation_bias(&cfg, 1, 3).unwrap();
    for m in 2..=5 {
        let b = estimation_bias(&cfg, m, 3).unwrap();
        assert_eq!(b.curve, one.curve);
    }
    assert!(one.bias.abs() < 1e-2);
}

#[test]
fn fit_is_exact_on_cubic() {
    let states: Vec<f64> = (0..12).map(|i| f64::from(i) * 0.5).collect();
    let values: Vec<f64> = states.iter().map(|s| 1.0 - 2.0 * s + 0.25 * s * s * s).collect();
    let poly = fit_polynomial(&ActionSamples { states: states.clone(), values: values.clone() }, 6, 3.0, 3.0).unwrap();
    for (s, v) in states.iter().zip(&values) {
        assert!((poly.eval(*s) - v).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn larger_subsets_never_raise_the_curve(seed in 0u64..1000, tau in 0.0f64..2.0) {
        let cfg = ToyConfig::default().with_tau(tau).with_seed(seed);
        let curves: Vec<Vec<f64>> = (1..=5).map(|m| estimation_bias(&cfg, m, 4).unwrap().curve).collect();
        for pair in curves.windows(2) {
            prop_assert!(pair[1].iter().zip(&pair[0]).all(|(b, a)| b <= a));
        }
    }

    #[test]
    fn proxy_is_a_pointwise_minimum(seed in 0u64..1000, m in 1u32..=5, s in 0.0f64..std::f64::consts::TAU) {
        let cfg = ToyConfig::default().with_seed(seed);
        let ens = build_ensemble(&cfg).unwrap();
        let proxy = proxy_min(&ens, m, seed).unwrap();
        prop_assert_eq!(proxy.indices().len(), m as usize);
        for a in 0..2 {
            let v = proxy.value(a, s);
            prop_assert!(proxy.indices().iter().all(|&i| ens[i].value(a, s) >= v));
            prop_assert!(proxy.indices().iter().any(|&i| ens[i].value(a, s) == v));
        }
    }

    #[test]
    fn same_seed_same_bias(seed in 0u64..1000) {
        let cfg = ToyConfig::default().with_seed(seed);
        prop_assert_eq!(estimation_bias(&cfg, 3, 2).unwrap(), estimation_bias(&cfg, 3, 2).unwrap());
    }
}
