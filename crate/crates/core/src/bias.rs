//! Estimation-bias bounds for min-of-M ensembles and a Monte Carlo oracle.
//!
//! The bias of interest is `E[Z_M] = gamma * E[max_a min_{i in M} e_i(a)]`
//! where every approximator error `e_i(a)` is an independent draw from
//! `U(-tau_i, tau_i)`. Two bound families are provided:
//!
//! * two-distribution bounds, where `K` approximators share a wide
//!   half-width `tau1` and the remaining `M - K` share `tau2 < tau1`;
//! * heterogeneous bounds that only depend on `tau_min` and `tau_max`.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::CounterStream;
use crate::special::{beta_k, f_coef, g_coef};

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

/// Errors drawn from one of two uniform laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoDistSpec {
    pub tau1: f64,
    pub tau2: f64,
    /// Number of in-target approximators with half-width `tau1`.
    pub k: u32,
    /// In-target ensemble size.
    pub m: u32,
    pub actions: u32,
    pub gamma: f64,
}

impl TwoDistSpec {
    pub fn new(tau1: f64, tau2: f64, k: u32, m: u32, actions: u32, gamma: f64) -> Result<Self> {
        let spec = Self { tau1, tau2, k, m, actions, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 > 0.0 && self.tau1 > self.tau2 && self.tau1.is_finite()) {
            return Err(Error::domain(format!(
                "need tau1 > tau2 > 0, got tau1={}, tau2={}",
                self.tau1, self.tau2
            )));
        }
        if self.k < 1 || self.k > self.m {
            return Err(Error::domain(format!("need 1 <= K <= M, got K={}, M={}", self.k, self.m)));
        }
        if self.actions < 1 {
            return Err(Error::domain("A must be at least 1"));
        }
        check_gamma(self.gamma)
    }

    pub fn with_m(&self, m: u32) -> Result<Self> {
        Self::new(self.tau1, self.tau2, self.k, m, self.actions, self.gamma)
    }

    /// The same ensemble as a heterogeneous spec: `K` copies of `tau1`
    /// followed by `M - K` copies of `tau2`.
    pub fn to_uniform(&self) -> UniformErrorSpec {
        let mut taus = vec![self.tau1; self.k as usize];
        taus.resize(self.m as usize, self.tau2);
        UniformErrorSpec { taus, actions: self.actions, gamma: self.gamma }
    }
}

/// One half-width per approximator, listed in in-target order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformErrorSpec {
    taus: Vec<f64>,
    actions: u32,
    gamma: f64,
}

impl UniformErrorSpec {
    pub fn new(taus: Vec<f64>, actions: u32, gamma: f64) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::domain("tau list must be non-empty"));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::domain(format!("every tau must be positive, got {t}")));
        }
        if actions < 1 {
            return Err(Error::domain("A must be at least 1"));
        }
        check_gamma(gamma)?;
        Ok(Self { taus, actions, gamma })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn actions(&self) -> u32 {
        self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The first `m` half-widths.
    pub fn in_target(&self, m: u32) -> Result<&[f64]> {
        let m = m as usize;
        if m == 0 || m > self.taus.len() {
            return Err(Error::domain(format!(
                "M={m} must lie in [1, {}] for this spec",
                self.taus.len()
            )));
        }
        Ok(&self.taus[..m])
    }

    /// `(tau_min, tau_max)` over the first `m` approximators.
    pub fn extremes(&self, m: u32) -> Result<(f64, f64)> {
        let t = self.in_target(m)?;
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }
}

/// Which closed form of the two-distribution lower bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thm1LowerForm {
    /// `tau2 (1 - 2 f_AM)`, the form reached at the end of the proof.
    #[default]
    Derived,
    /// `tau2 (1 - f_AM)`, as stated alongside the bound.
    Stated,
}

/// Which closed form of the heterogeneous upper bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thm2UpperForm {
    /// `gamma (2 tau_min - tau_max (1 + f_AM - 2 g_AM))`: the form whose sign
    /// change is used to locate the underestimation critical point.
    #[default]
    Crossing,
    /// `gamma (2 tau_min - tau_max (f_AM - 2 g_AM))`, the form stated with
    /// the bound.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSource {
    TwoDistributions,
    Heterogeneous,
}

/// Bounds on `E[Z_M]`; a side is `None` when its precondition fails at this `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub source: BoundSource,
}

impl BiasBounds {
    /// True when `value` lies inside the available sides, widened by `slack`.
    pub fn contains(&self, value: f64, slack: f64) -> bool {
        self.lower.is_none_or(|l| value >= l - slack) && self.upper.is_none_or(|u| value <= u + slack)
    }
}

/// `gamma (tau1 (1 - f_AK - 2 f_AM) + tau2 (1 - c f_AM))`, `c = 2` for the
/// derived form and `c = 1` for the stated form.
pub fn thm1_lower(spec: &TwoDistSpec, form: Thm1LowerForm) -> Result<f64> {
    spec.validate()?;
    let f_ak = f_coef(spec.actions, spec.k)?;
    let f_am = f_coef(spec.actions, spec.m)?;
    let c = match form {
        Thm1LowerForm::Derived => 2.0,
        Thm1LowerForm::Stated => 1.0,
    };
    Ok(spec.gamma * (spec.tau1 * (1.0 - f_ak - 2.0 * f_am) + spec.tau2 * (1.0 - c * f_am)))
}

/// `gamma (tau1 + tau2 (1 - 2 f_{A(M-K)} - (1 - beta_K)^A))`; needs `M > K`.
pub fn thm1_upper(spec: &TwoDistSpec) -> Result<f64> {
    spec.validate()?;
    if spec.m <= spec.k {
        return Err(Error::domain(format!(
            "upper bound needs M > K, got M={}, K={}",
            spec.m, spec.k
        )));
    }
    let f = f_coef(spec.actions, spec.m - spec.k)?;
    let b = beta_k(spec.tau1, spec.tau2, spec.k)?;
    let miss = (1.0 - b).powi(spec.actions as i32);
    Ok(spec.gamma * (spec.tau1 + spec.tau2 * (1.0 - 2.0 * f - miss)))
}

/// Heterogeneous lower bound from the extreme half-widths; needs `M >= 2`.
pub fn thm2_lower_from(tau_min: f64, tau_max: f64, actions: u32, gamma: f64, m: u32) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("lower bound needs M >= 2, got M={m}")));
    }
    let f_prev = f_coef(actions, m - 1)?;
    let f_am = f_coef(actions, m)?;
    Ok(gamma * (tau_min - tau_max * (f_prev + 2.0 * f_am)))
}

/// Heterogeneous upper bound from the extreme half-widths.
pub fn thm2_upper_from(
    tau_min: f64,
    tau_max: f64,
    actions: u32,
    gamma: f64,
    m: u32,
    form: Thm2UpperForm,
) -> Result<f64> {
    let f_am = f_coef(actions, m)?;
    let g_am = g_coef(actions, m)?;
    let lead = match form {
        Thm2UpperForm::Crossing => 1.0,
        Thm2UpperForm::Printed => 0.0,
    };
    Ok(gamma * (2.0 * tau_min - tau_max * (lead + f_am - 2.0 * g_am)))
}

/// `gamma (tau_min - tau_max (f_{A(M-1)} + 2 f_AM))` over the first `m` approximators.
pub fn thm2_lower(spec: &UniformErrorSpec, m: u32) -> Result<f64> {
    let (lo, hi) = spec.extremes(m)?;
    thm2_lower_from(lo, hi, spec.actions, spec.gamma, m)
}

pub fn thm2_upper(spec: &UniformErrorSpec, m: u32, form: Thm2UpperForm) -> Result<f64> {
    let (lo, hi) = spec.extremes(m)?;
    thm2_upper_from(lo, hi, spec.actions, spec.gamma, m, form)
}

/// A bound family with everything fixed except the ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundModel {
    TwoDistributions {
        tau1: f64,
        tau2: f64,
        k: u32,
        actions: u32,
        gamma: f64,
        lower_form: Thm1LowerForm,
    },
    /// `taus` is a pattern that is repeated to fill `M` slots.
    Heterogeneous {
        taus: Vec<f64>,
        actions: u32,
        gamma: f64,
        upper_form: Thm2UpperForm,
    },
}

impl BoundModel {
    pub fn source(&self) -> BoundSource {
        match self {
            BoundModel::TwoDistributions { .. } => BoundSource::TwoDistributions,
            BoundModel::Heterogeneous { .. } => BoundSource::Heterogeneous,
        }
    }

    /// Error spec of the `m` in-target approximators this model describes.
    pub fn error_spec(&self, m: u32) -> Result<UniformErrorSpec> {
        match self {
            BoundModel::TwoDistributions { tau1, tau2, k, actions, gamma, .. } => {
                Ok(TwoDistSpec::new(*tau1, *tau2, *k, m, *actions, *gamma)?.to_uniform())
            }
            BoundModel::Heterogeneous { taus, actions, gamma, .. } => {
                if taus.is_empty() || m == 0 {
                    return Err(Error::domain("need a non-empty tau pattern and M >= 1"));
                }
                let filled = taus.iter().copied().cycle().take(m as usize).collect();
                UniformErrorSpec::new(filled, *actions, *gamma)
            }
        }
    }

    /// Both bounds at ensemble size `m`; sides whose preconditions fail are `None`.
    pub fn bounds(&self, m: u32) -> BiasBounds {
        let (lower, upper) = match self {
            BoundModel::TwoDistributions { tau1, tau2, k, actions, gamma, lower_form } => {
                match TwoDistSpec::new(*tau1, *tau2, *k, m, *actions, *gamma) {
                    Ok(spec) => (thm1_lower(&spec, *lower_form).ok(), thm1_upper(&spec).ok()),
                    Err(_) => (None, None),
                }
            }
            BoundModel::Heterogeneous { upper_form, .. } => match self.error_spec(m) {
                Ok(spec) => (thm2_lower(&spec, m).ok(), thm2_upper(&spec, m, *upper_form).ok()),
                Err(_) => (None, None),
            },
        };
        BiasBounds { lower, upper, source: self.source() }
    }
}

/// Integer ensemble sizes where the bounds change sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriticalPoints {
    /// Largest `M` whose lower bound is still positive.
    pub m_lower: Option<u32>,
    /// Smallest `M` whose upper bound is at or below zero.
    pub m_upper: Option<u32>,
}

pub fn critical_points(model: &BoundModel, range: RangeInclusive<u32>) -> CriticalPoints {
    let mut out = CriticalPoints::default();
    for m in range {
        let b = model.bounds(m);
        if b.lower.is_some_and(|l| l > 0.0) {
            out.m_lower = Some(m);
        }
        if out.m_upper.is_none() && b.upper.is_some_and(|u| u <= 0.0) {
            out.m_upper = Some(m);
        }
    }
    out
}

/// Interval of swept error levels for which some ensemble size keeps both
/// bounds out of their sign-violating regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CInterval {
    pub low: f64,
    pub high: f64,
}

/// `model_for(x)` builds the bound family for swept error level `x`. Returns
/// `None` when no grid point admits an ensemble size in `range` with
/// `lower <= 0 <= upper`.
pub fn determine_c<F>(grid: &[f64], model_for: F, range: RangeInclusive<u32>) -> Option<CInterval>
where
    F: Fn(f64) -> BoundModel,
{
    let mut interval: Option<CInterval> = None;
    for &x in grid {
        let model = model_for(x);
        let white = range.clone().any(|m| {
            let b = model.bounds(m);
            if b.lower.is_none() && b.upper.is_none() {
                return false;
            }
            b.lower.is_none_or(|l| l <= 0.0) && b.upper.is_none_or(|u| u >= 0.0)
        });
        if white {
            interval = Some(match interval {
                None => CInterval { low: x, high: x },
                Some(c) => CInterval { low: c.low.min(x), high: c.high.max(x) },
            });
        }
    }
    interval
}

/// Evenly spaced grid `start, start + step, ..., <= stop` without drift.
pub fn sweep_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return vec![start];
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

/// Sample mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

const MC_BLOCK: u64 = 8192;

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }
}

/// Monte Carlo estimate of `E[Z_M]` for the first `m` approximators of `spec`.
pub fn mc_bias_oracle(spec: &UniformErrorSpec, m: u32, n_samples: u64, seed: u64) -> Result<McEstimate> {
    Ok(mc_bias_curve(spec, &[m], n_samples, seed)?[0])
}

/// Monte Carlo estimates of `E[Z_M]` for several ensemble sizes at once.
///
/// Every trial draws an `A x L` error matrix (`L = spec.taus().len()`) from
/// a counter-addressed stream keyed by `(seed, trial)`; size `M` uses the
/// first `M` columns. The estimate for a given `M` is therefore identical to
/// [`mc_bias_oracle`] with the same seed, and trials are split into fixed
/// blocks whose statistics are merged in block order, so the result does
/// not depend on the number of worker threads.
pub fn mc_bias_curve(spec: &UniformErrorSpec, ms: &[u32], n_samples: u64, seed: u64) -> Result<Vec<McEstimate>> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    for &m in ms {
        spec.in_target(m)?;
    }
    if ms.is_empty() {
        return Ok(Vec::new());
    }
    let taus = spec.taus();
    let width = taus.len() as u64;
    let deepest = *ms.iter().max().expect("non-empty") as usize;
    let actions = spec.actions() as u64;
    let n_blocks = n_samples.div_ceil(MC_BLOCK);

    let blocks: Vec<Vec<Moments>> = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let start = block * MC_BLOCK;
            let end = (start + MC_BLOCK).min(n_samples);
            let mut moments = vec![Moments::default(); ms.len()];
            let mut prefix_min = vec![0.0f64; deepest];
            let mut best = vec![f64::NEG_INFINITY; ms.len()];
            for trial in start..end {
                let stream = CounterStream::keyed(seed, trial, 0);
                best.iter_mut().for_each(|b| *b = f64::NEG_INFINITY);
                for a in 0..actions {
                    let row = a * width;
                    let mut running = f64::INFINITY;
                    for (i, slot) in prefix_min.iter_mut().enumerate() {
                        let e = taus[i] * stream.symmetric(row + i as u64);
                        running = running.min(e);
                        *slot = running;
                    }
                    for (b, &m) in best.iter_mut().zip(ms) {
                        *b = b.max(prefix_min[m as usize - 1]);
                    }
                }
                for (acc, &b) in moments.iter_mut().zip(&best) {
                    acc.push(b);
                }
            }
            moments
        })
        .collect();

    let mut total = vec![Moments::default(); ms.len()];
    for block in blocks {
        for (t, b) in total.iter_mut().zip(block) {
            *t = t.merge(b);
        }
    }
    let gamma = spec.gamma();
    Ok(total
        .into_iter()
        .map(|m| {
            let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
            McEstimate {
                mean: gamma * m.mean,
                std_error: gamma * (var / m.n).sqrt(),
                n_samples,
            }
        })
        .collect())
}

/// One row of a bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub m: u32,
    pub bounds: BiasBounds,
    pub mc: Option<McEstimate>,
}

/// Bounds over `range`, optionally with an oracle estimate per row.
pub fn bound_table(model: &BoundModel, range: RangeInclusive<u32>, mc: Option<(u64, u64)>) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for m in range {
        let bounds = model.bounds(m);
        let mc = match mc {
            Some((n, seed)) => match model.error_spec(m) {
                Ok(spec) => Some(mc_bias_oracle(&spec, m, n, seed)?),
                Err(_) => None,
            },
            None => None,
        };
        rows.push(BoundRow { m, bounds, mc });
    }
    Ok(rows)
}
