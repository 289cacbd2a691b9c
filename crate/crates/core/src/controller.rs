//! Error characterization and feedback adaptation of the in-target ensemble size.
//!
//! The error statistic is the mean over approximators of the sample standard
//! deviation of `Q^i(s, a) - G(s, a)` along a greedy test trajectory, where
//! `G` is the truncated Monte Carlo return. It measures the spread of the
//! errors, not their level: an ensemble that is uniformly off by a constant
//! reports zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax_random_tie, rollout_mc_returns, MdpSpec, QTable, TestTrajectory};

/// Attempts at finding a test trajectory with at least two pairs.
pub const MAX_ROLLOUT_RETRIES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    /// Tolerance parameter compared against the error statistic.
    pub c: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// Training iterations between adaptations.
    pub adaptation_every: u64,
    /// Test trajectory length.
    pub horizon: usize,
    /// Test trajectories averaged per adaptation.
    pub n_trajectories: u32,
}

impl AdaptationConfig {
    pub fn new(c: f64, n_max: u32) -> Self {
        Self { c, n_min: 2, n_max, adaptation_every: 1000, horizon: 200, n_trajectories: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) {
            return Err(Error::Config(format!("c must be non-negative, got {}", self.c)));
        }
        if self.n_min != 2 || self.n_max < self.n_min {
            return Err(Error::Config(format!(
                "size range must be [2, N] with N >= 2, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        if self.adaptation_every == 0 || self.horizon < 2 || self.n_trajectories == 0 {
            return Err(Error::Config("adaptation cadence, horizon and trajectory count must be positive (horizon >= 2)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub tau_tilde: f64,
    pub per_approximator_stds: Vec<f64>,
    pub n_pairs: usize,
}

fn sample_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Error statistic of `tables` on an already generated trajectory.
pub fn error_on_trajectory(tables: &[QTable], traj: &TestTrajectory) -> Result<ErrorEstimate> {
    let n_pairs = traj.pairs.len();
    if n_pairs < 2 {
        return Err(Error::DegenerateTrajectory { visited: n_pairs });
    }
    if tables.is_empty() {
        return Err(Error::domain("no approximators to characterize"));
    }
    let stds: Vec<f64> = tables
        .iter()
        .map(|q| sample_std(traj.pairs.iter().zip(&traj.returns).map(|(&(s, a), g)| q.get(s, a) - g)))
        .collect();
    let tau_tilde = stds.iter().sum::<f64>() / stds.len() as f64;
    Ok(ErrorEstimate { tau_tilde, per_approximator_stds: stds, n_pairs })
}

/// Mean of the tables at `(s, ·)`.
pub fn mean_row(tables: &[QTable], s: usize) -> Vec<f64> {
    let na = tables[0].n_actions;
    let mut row = vec![0.0; na];
    for q in tables {
        for (r, v) in row.iter_mut().zip(q.row(s)) {
            *r += v;
        }
    }
    let n = tables.len() as f64;
    row.iter_mut().for_each(|r| *r /= n);
    row
}

/// Greedy rollout on the ensemble mean from a uniformly random live state,
/// retried until it visits at least `min_pairs` pairs.
pub fn greedy_test_trajectory<R: Rng + ?Sized>(
    tables: &[QTable],
    mdp: &MdpSpec,
    horizon: usize,
    min_pairs: usize,
    rng: &mut R,
) -> Result<TestTrajectory> {
    if tables.is_empty() {
        return Err(Error::domain("no approximators"));
    }
    let mut visited = 0;
    for _ in 0..MAX_ROLLOUT_RETRIES {
        let start = mdp.random_start(rng);
        let traj = rollout_mc_returns(mdp, start, |s, r: &mut R| argmax_random_tie(&mean_row(tables, s), r), horizon, rng)?;
        if traj.pairs.len() >= min_pairs {
            return Ok(traj);
        }
        visited = traj.pairs.len();
    }
    Err(Error::DegenerateTrajectory { visited })
}

/// Error statistic averaged over `n_trajectories` greedy test trajectories.
pub fn characterize_error<R: Rng + ?Sized>(
    tables: &[QTable],
    mdp: &MdpSpec,
    horizon: usize,
    n_trajectories: u32,
    rng: &mut R,
) -> Result<ErrorEstimate> {
    if horizon < 2 {
        return Err(Error::domain("horizon must be at least 2"));
    }
    let k = n_trajectories.max(1);
    let mut acc: Option<ErrorEstimate> = None;
    for _ in 0..k {
        let traj = greedy_test_trajectory(tables, mdp, horizon, 2, rng)?;
        let est = error_on_trajectory(tables, &traj)?;
        acc = Some(match acc {
            None => est,
            Some(mut a) => {
                for (x, y) in a.per_approximator_stds.iter_mut().zip(&est.per_approximator_stds) {
                    *x += y;
                }
                a.n_pairs += est.n_pairs;
                a
            }
        });
    }
    let mut est = acc.expect("at least one trajectory");
    est.per_approximator_stds.iter_mut().for_each(|x| *x /= f64::from(k));
    est.tau_tilde = est.per_approximator_stds.iter().sum::<f64>() / est.per_approximator_stds.len() as f64;
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Increase,
    Decrease,
    Keep,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Increase => "increase",
            Branch::Decrease => "decrease",
            Branch::Keep => "keep",
        }
    }
}

/// Next ensemble size given the current error statistic.
///
/// Above tolerance the size jumps to a uniform draw from `[M + 1, N]`, below
/// it to a uniform draw from `[2, M - 1]`; at the boundaries, or when the
/// statistic equals `c`, the size is kept.
pub fn adapt_size<R: Rng + ?Sized>(m_prev: u32, tau_tilde: f64, config: &AdaptationConfig, rng: &mut R) -> (u32, Branch) {
    if tau_tilde > config.c && m_prev < config.n_max {
        (rng.random_range(m_prev + 1..=config.n_max), Branch::Increase)
    } else if tau_tilde < config.c && m_prev > config.n_min {
        (rng.random_range(config.n_min..=m_prev - 1), Branch::Decrease)
    } else {
        (m_prev, Branch::Keep)
    }
}

/// One logged adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationEvent {
    pub iteration: u64,
    pub tau_tilde: f64,
    #[serde(rename = "M_prev")]
    pub m_prev: u32,
    #[serde(rename = "M_next")]
    pub m_next: u32,
    #[serde(rename = "branch_taken")]
    pub branch: Branch,
}

/// Per-approximator uniform half-widths fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfWidthFit {
    pub per_approximator: Vec<f64>,
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_pairs: usize,
}

/// `tau_i = max |Q^i - G|` over the visited pairs of `traj`.
pub fn halfwidths_on_trajectory(tables: &[QTable], traj: &TestTrajectory) -> Result<HalfWidthFit> {
    if traj.pairs.len() < 2 {
        return Err(Error::DegenerateTrajectory { visited: traj.pairs.len() });
    }
    let per: Vec<f64> = tables
        .iter()
        .map(|q| {
            traj.pairs
                .iter()
                .zip(&traj.returns)
                .map(|(&(s, a), g)| (q.get(s, a) - g).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let tau_min = per.iter().copied().fold(f64::INFINITY, f64::min);
    let tau_max = per.iter().copied().fold(0.0, f64::max);
    Ok(HalfWidthFit { per_approximator: per, tau_min, tau_max, n_pairs: traj.pairs.len() })
}

pub fn fit_uniform_halfwidths<R: Rng + ?Sized>(tables: &[QTable], mdp: &MdpSpec, horizon: usize, rng: &mut R) -> Result<HalfWidthFit> {
    let traj = greedy_test_trajectory(tables, mdp, horizon, 2, rng)?;
    halfwidths_on_trajectory(tables, &traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_q_values, make_ring, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AdaptationConfig {
        AdaptationConfig::new(0.3, 10)
    }

    #[test]
    fn clamps_and_knife_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(adapt_size(2, 0.1, &cfg(), &mut rng), (2, Branch::Keep));
        assert_eq!(adapt_size(10, 0.9, &cfg(), &mut rng), (10, Branch::Keep));
        assert_eq!(adapt_size(5, 0.3, &cfg(), &mut rng), (5, Branch::Keep));
    }

    #[test]
    fn branches_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (m, b) = adapt_size(4, 0.5, &cfg(), &mut rng);
            assert!((5..=10).contains(&m) && b == Branch::Increase);
            let (m, b) = adapt_size(4, 0.1, &cfg(), &mut rng);
            assert!((2..=3).contains(&m) && b == Branch::Decrease);
        }
    }

    #[test]
    fn exact_tables_have_no_spread() {
        let mdp = make_ring(7, 2, 0.5).unwrap();
        let q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = characterize_error(&[q.clone(), q.clone()], &mdp, 80, 1, &mut rng).unwrap();
        // truncation leaves at most gamma^(H - t) V_max at the tail
        assert!(est.tau_tilde < 0.2, "{est:?}");
        assert_eq!(est.n_pairs, 81);
    }

    #[test]
    fn constant_offset_is_invisible() {
        let mdp = make_ring(7, 2, 0.5).unwrap();
        let q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
        let mut shifted = q.clone();
        shifted.values.iter_mut().for_each(|v| *v += 3.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = characterize_error(&[q], &mdp, 60, 1, &mut r1).unwrap();
        let b = characterize_error(&[shifted], &mdp, 60, 1, &mut r2).unwrap();
        assert!((a.tau_tilde - b.tau_tilde).abs() < 1e-12);
    }

    #[test]
    fn halfwidths_are_ordered() {
        let mdp = make_ring(5, 2, 0.5).unwrap();
        let q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fit = fit_uniform_halfwidths(&[q.clone(), q], &mdp, 100, &mut rng).unwrap();
        assert!(fit.tau_min <= fit.tau_max);
        assert!(fit.tau_max <= 1.0 + 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(AdaptationConfig { c: -1.0, ..cfg() }.validate().is_err());
        assert!(AdaptationConfig { n_max: 1, ..cfg() }.validate().is_err());
        assert!(AdaptationConfig { horizon: 1, ..cfg() }.validate().is_err());
    }
}
