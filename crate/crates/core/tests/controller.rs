use adaeq::controller::{adapt_size, characterize_error, error_on_trajectory, AdaptationConfig, Branch};
use adaeq::diagnostics::{aggregate_runs, measure_bias, BiasMode, EvalRow, RunRecord};
use adaeq::mdp::{exact_q_values, make_ring, Policy, QTable, TestTrajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_tables(n: usize, tau: f64, seed: u64) -> (adaeq::mdp::MdpSpec, Vec<QTable>) {
    let mdp = make_ring(16, 3, 0.5).unwrap();
    let q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = (0..n)
        .map(|_| {
            let mut t = q.clone();
            t.values.iter_mut().for_each(|v| *v += tau * (2.0 * rng.random::<f64>() - 1.0));
            t
        })
        .collect();
    (mdp, tables)
}

fn row(step: u64, bias: f64) -> EvalRow {
    EvalRow { step, m_t: 2, tau_tilde: 0.0, bias, proxy_bias: 0.0, ret: 0.0, q_error: 0.0, wall_ms: 0.0 }
}

#[test]
fn aggregate_of_zero_and_two() {
    let a = RunRecord { rows: vec![row(10, 0.0)], ..Default::default() };
    let b = RunRecord { rows: vec![row(10, 2.0)], ..Default::default() };
    let agg = aggregate_runs(&[a.clone(), b]).unwrap();
    assert_eq!(agg.mean[2][0], 1.0);
    assert!((agg.std[2][0] - 2f64.sqrt()).abs() < 1e-15);
    let same = aggregate_runs(&[a.clone(), a]).unwrap();
    assert!(same.std.iter().flatten().all(|s| *s == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adaptation_moves_the_right_way(m_prev in 2u32..=12, n_extra in 0u32..8, tau in 0.0f64..2.0, c in 0.0f64..2.0, seed in any::<u64>()) {
        let n = m_prev + n_extra;
        let cfg = AdaptationConfig::new(c, n);
        let (m, branch) = adapt_size(m_prev, tau, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((2..=n).contains(&m));
        match branch {
            Branch::Increase => prop_assert!(tau > c && m > m_prev),
            Branch::Decrease => prop_assert!(tau < c && m < m_prev),
            Branch::Keep => {
                prop_assert_eq!(m, m_prev);
                prop_assert!(tau == c || (tau > c && m_prev == n) || (tau < c && m_prev == 2));
            }
        }
    }

    #[test]
    fn error_statistic_ignores_table_order(seed in any::<u64>(), n in 2usize..6) {
        let (mdp, mut tables) = noisy_tables(n, 0.3, seed);
        let a = characterize_error(&tables, &mdp, 40, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        tables.reverse();
        let b = characterize_error(&tables, &mdp, 40, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((a.tau_tilde - b.tau_tilde).abs() < 1e-12);
    }

    #[test]
    fn error_statistic_scales_with_noise(seed in any::<u64>(), k in 0.1f64..5.0) {
        let (_, tables) = noisy_tables(3, 0.3, seed);
        let traj = TestTrajectory { pairs: (0..16).map(|s| (s, s % 3)).collect(), rewards: vec![0.0; 16], returns: vec![0.0; 16] };
        let scaled: Vec<QTable> = tables
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.values.iter_mut().for_each(|v| *v *= k);
                t
            })
            .collect();
        let a = error_on_trajectory(&tables, &traj).unwrap().tau_tilde;
        let b = error_on_trajectory(&scaled, &traj).unwrap().tau_tilde;
        prop_assert!((b - k * a).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn shifting_every_table_shifts_the_bias(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let (mdp, tables) = noisy_tables(4, 0.2, seed);
        let shifted: Vec<QTable> = tables
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.values.iter_mut().for_each(|v| *v += shift);
                t
            })
            .collect();
        let before = tables.clone();
        let a = measure_bias(&tables, &mdp, 60, &BiasMode::MeanQ, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = measure_bias(&shifted, &mdp, 60, &BiasMode::MeanQ, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((b - a - shift).abs() < 1e-9);
        prop_assert_eq!(tables, before);
    }
}
