//! Training diagnostics: measured bias, returns, run records and seed aggregation.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{greedy_test_trajectory, mean_row, AdaptationEvent};
use crate::error::{Error, Result};
use crate::mdp::{argmax_random_tie, MdpSpec, QTable};

/// How the Q estimate compared against the Monte Carlo return is formed.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasMode<'a> {
    /// Mean over all approximators.
    MeanQ,
    /// Minimum over the listed approximators.
    MinOver(&'a [usize]),
    /// Mean over the listed approximators.
    MeanOver(&'a [usize]),
}

fn estimate(tables: &[QTable], mode: &BiasMode<'_>, s: usize, a: usize) -> f64 {
    match mode {
        BiasMode::MeanQ => tables.iter().map(|q| q.get(s, a)).sum::<f64>() / tables.len() as f64,
        BiasMode::MinOver(idx) => idx.iter().map(|&i| tables[i].get(s, a)).fold(f64::INFINITY, f64::min),
        BiasMode::MeanOver(idx) => idx.iter().map(|&i| tables[i].get(s, a)).sum::<f64>() / idx.len() as f64,
    }
}

/// Average of `estimate(s, a) - G(s, a)` over the pairs of `n_trajectories`
/// greedy test trajectories.
pub fn measure_bias<R: Rng + ?Sized>(
    tables: &[QTable],
    mdp: &MdpSpec,
    horizon: usize,
    mode: &BiasMode<'_>,
    n_trajectories: u32,
    rng: &mut R,
) -> Result<f64> {
    let k = n_trajectories.max(1);
    let mut total = 0.0;
    for _ in 0..k {
        let traj = greedy_test_trajectory(tables, mdp, horizon, 1, rng)?;
        let sum: f64 = traj
            .pairs
            .iter()
            .zip(&traj.returns)
            .map(|(&(s, a), g)| estimate(tables, mode, s, a) - g)
            .sum();
        total += sum / traj.pairs.len() as f64;
    }
    Ok(total / f64::from(k))
}

/// Undiscounted return of one greedy episode from a random live state.
pub fn measure_return<R: Rng + ?Sized>(tables: &[QTable], mdp: &MdpSpec, episode_cap: usize, rng: &mut R) -> Result<f64> {
    if episode_cap < 1 {
        return Err(Error::domain("episode cap must be at least 1"));
    }
    if tables.is_empty() {
        return Err(Error::domain("no approximators"));
    }
    let mut s = mdp.random_start(rng);
    let mut total = 0.0;
    for _ in 0..episode_cap {
        let a = argmax_random_tie(&mean_row(tables, s), rng);
        let (r, next, done) = mdp.step(s, a, rng);
        total += r;
        if done {
            break;
        }
        s = next;
    }
    Ok(total)
}

/// Short stable hash of an environment, used to tag records.
pub fn env_hash(mdp: &MdpSpec) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(mdp)?);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    #[serde(rename = "M_t")]
    pub m_t: u32,
    pub tau_tilde: f64,
    pub bias: f64,
    pub proxy_bias: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub q_error: f64,
    pub wall_ms: f64,
}

/// Numeric columns of [`EvalRow`] in CSV order, excluding `step`.
pub const EVAL_COLUMNS: [&str; 7] = ["M_t", "tau_tilde", "bias", "proxy_bias", "return", "q_error", "wall_ms"];

impl EvalRow {
    pub fn column(&self, i: usize) -> f64 {
        match i {
            0 => f64::from(self.m_t),
            1 => self.tau_tilde,
            2 => self.bias,
            3 => self.proxy_bias,
            4 => self.ret,
            5 => self.q_error,
            _ => self.wall_ms,
        }
    }

    /// Row equality ignoring wall-clock time.
    pub fn same_numbers(&self, other: &EvalRow) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.step == other.step
            && self.m_t == other.m_t
            && (0..6).all(|i| eq(self.column(i), other.column(i)))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub policy: String,
    pub env_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<EvalRow>,
    pub events: Vec<AdaptationEvent>,
}

impl RunRecord {
    pub fn steps(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.step).collect()
    }

    pub fn write_rows<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        if self.rows.is_empty() {
            out.write_record(std::iter::once("step").chain(EVAL_COLUMNS))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_events<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "tau_tilde", "M_prev", "M_next", "branch_taken"])?;
        for e in &self.events {
            out.write_record([
                e.iteration.to_string(),
                e.tau_tilde.to_string(),
                e.m_prev.to_string(),
                e.m_next.to_string(),
                e.branch.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_rows(&self, path: &Path) -> Result<()> {
        self.write_rows(std::fs::File::create(path)?)
    }

    /// Parse evaluation rows; rows must be ordered by strictly increasing step.
    pub fn read_rows<R: Read>(r: R) -> Result<Vec<EvalRow>> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<EvalRow> = Vec::new();
        for row in rdr.deserialize() {
            let row: EvalRow = row?;
            if let Some(prev) = rows.last() {
                if row.step <= prev.step {
                    return Err(Error::Parse(format!("step {} follows step {}", row.step, prev.step)));
                }
            }
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn load_rows(path: &Path) -> Result<RunRecord> {
        let rows = Self::read_rows(std::fs::File::open(path)?)?;
        Ok(RunRecord { rows, ..Default::default() })
    }
}

/// Pointwise mean and sample standard deviation across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub steps: Vec<u64>,
    /// `mean[c][k]` for column `c` of [`EVAL_COLUMNS`] at `steps[k]`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub n_runs: usize,
}

pub fn aggregate_runs(records: &[RunRecord]) -> Result<Aggregate> {
    let first = records
        .first()
        .ok_or_else(|| Error::CadenceMismatch("no records to aggregate".into()))?;
    let steps = first.steps();
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.steps() != steps {
            return Err(Error::CadenceMismatch(format!("record {i} logs different steps than record 0")));
        }
    }
    let n = records.len() as f64;
    let ncol = EVAL_COLUMNS.len();
    let mut mean = vec![vec![0.0; steps.len()]; ncol];
    let mut std = vec![vec![0.0; steps.len()]; ncol];
    for c in 0..ncol {
        for k in 0..steps.len() {
            let m = records.iter().map(|r| r.rows[k].column(c)).sum::<f64>() / n;
            let v = if records.len() > 1 {
                records.iter().map(|r| (r.rows[k].column(c) - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean[c][k] = m;
            std[c][k] = v.sqrt();
        }
    }
    Ok(Aggregate { steps, mean, std, n_runs: records.len() })
}

impl Aggregate {
    /// CSV with `step` followed by `<col>_mean,<col>_std` for every column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        for c in EVAL_COLUMNS {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        out.write_record(&header)?;
        for (k, step) in self.steps.iter().enumerate() {
            let mut rec = vec![step.to_string()];
            for c in 0..EVAL_COLUMNS.len() {
                rec.push(self.mean[c][k].to_string());
                rec.push(self.std[c][k].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_q_values, make_noisy_gridworld, make_ring, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(step: u64, bias: f64) -> EvalRow {
        EvalRow { step, m_t: 2, tau_tilde: 0.1, bias, proxy_bias: bias, ret: 1.0, q_error: 0.0, wall_ms: 0.0 }
    }

    fn record(biases: &[f64]) -> RunRecord {
        RunRecord {
            rows: biases.iter().enumerate().map(|(i, b)| row(10 * (i as u64 + 1), *b)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn shifted_exact_ensemble_reports_shift() {
        let mdp = make_noisy_gridworld(4, 4, 0.0, 0.9, 0).unwrap();
        let mut q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
        q.values.iter_mut().for_each(|v| *v += 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = measure_bias(&[q.clone(), q], &mdp, 100, &BiasMode::MeanQ, 3, &mut rng).unwrap();
        assert!((b - 0.5).abs() < 1e-9, "{b}");
    }

    #[test]
    fn returns_on_known_paths() {
        let mdp = make_noisy_gridworld(4, 4, 0.0, 0.9, 0).unwrap();
        let q = exact_q_values(&mdp, &Policy::Optimal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(measure_return(std::slice::from_ref(&q), &mdp, 100, &mut rng).unwrap(), 1.0);
        }
        let ring = make_ring(3, 2, 0.9).unwrap();
        let qr = exact_q_values(&ring, &Policy::Optimal).unwrap();
        assert_eq!(measure_return(&[qr], &ring, 1, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_two_records() {
        let agg = aggregate_runs(&[record(&[0.0]), record(&[2.0])]).unwrap();
        assert_eq!(agg.mean[2][0], 1.0);
        assert!((agg.std[2][0] - 2f64.sqrt()).abs() < 1e-15);
        let same = aggregate_runs(&[record(&[0.3, 0.4]), record(&[0.3, 0.4])]).unwrap();
        assert!(same.std.iter().flatten().all(|s| *s == 0.0));
    }

    #[test]
    fn aggregate_rejects_cadence_mismatch() {
        let err = aggregate_runs(&[record(&[0.0]), record(&[0.0, 1.0])]).unwrap_err();
        assert!(matches!(err, Error::CadenceMismatch(_)));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rec = record(&[0.25, -1.5, 3.0]);
        let mut buf = Vec::new();
        rec.write_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,M_t,tau_tilde,bias,proxy_bias,return,q_error,wall_ms\n"));
        assert_eq!(RunRecord::read_rows(&buf[..]).unwrap(), rec.rows);
    }

    #[test]
    fn unordered_rows_are_rejected() {
        let text = "step,M_t,tau_tilde,bias,proxy_bias,return,q_error,wall_ms\n20,2,0,0,0,0,0,0\n10,2,0,0,0,0,0,0\n";
        assert!(RunRecord::read_rows(text.as_bytes()).is_err());
    }
}
