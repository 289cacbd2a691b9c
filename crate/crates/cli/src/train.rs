use std::fs;
use std::path::{Path, PathBuf};

use adaeq::config::{parse_env_name, parse_f64_list, parse_u32_list, PolicyKind, RunConfig};
use adaeq::diagnostics::{aggregate_runs, env_hash, RunRecord, EVAL_COLUMNS};
use adaeq::ensemble::{run_training, InitScheme};
use adaeq::svg::{line_plot, Series};
use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use crate::output::{csv_string, manifest, pool, tracked, Sink};
use crate::{usage, CliError};

/// Settings shared by `train` and `sweep`; flags override the config file.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment name: `grid4`, `grid5x3`, `grid4-det`, `ring12`, `random20`.
    #[arg(long)]
    env: Option<String>,
    /// Number of approximators.
    #[arg(long = "N")]
    n: Option<u32>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    adaptation_every: Option<u64>,
    /// Test trajectories per error and bias measurement.
    #[arg(long)]
    eval_trajectories: Option<u32>,
    /// Initialise tables with `U(-x, x)` entries instead of zeros.
    #[arg(long)]
    init_uniform: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `fixed`, `maxmin`, `adaeq` or `average`.
    #[arg(long)]
    policy: Option<String>,
    /// Initial ensemble size for the adaptive policy.
    #[arg(long = "M0")]
    m0: Option<u32>,
    /// Error tolerance of the adaptive policy.
    #[arg(long)]
    c: Option<f64>,
    /// Ensemble size of the fixed policy.
    #[arg(long = "M")]
    m: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated policies.
    #[arg(long, default_value = "adaeq")]
    policy: String,
    /// Initial sizes for the adaptive policy, e.g. `2,3,5`.
    #[arg(long = "M0")]
    m0: Option<String>,
    /// Tolerances for the adaptive policy, e.g. `0.001,0.3,0.5`.
    #[arg(long)]
    c: Option<String>,
    /// Sizes for the fixed policy.
    #[arg(long = "M")]
    m: Option<String>,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Run CSVs sharing one evaluation cadence.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(r: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &r.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("--config {}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(|e| usage(format!("--config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(e) = &r.env {
        cfg.env = parse_env_name(e).map_err(|e| usage(format!("--env: {e}")))?;
    }
    if let Some(n) = r.n {
        cfg.train.n_approximators = n;
    }
    if let Some(v) = r.steps {
        cfg.steps = v;
    }
    if let Some(v) = r.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = r.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = r.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = r.alpha {
        cfg.train.alpha = v;
    }
    if let Some(v) = r.warmup {
        cfg.train.warmup_steps = v;
    }
    if let Some(v) = r.adaptation_every {
        cfg.policy.adaptation_every = v;
    }
    if let Some(v) = r.eval_trajectories {
        cfg.train.eval_trajectories = v;
        cfg.policy.n_trajectories = v;
    }
    if let Some(v) = r.init_uniform {
        cfg.train.init = InitScheme::Uniform(v);
    }
    Ok(cfg)
}

fn finish(mut cfg: RunConfig) -> Result<RunConfig, CliError> {
    if cfg.policy.kind != PolicyKind::Adaeq && cfg.train.m0 > cfg.train.n_approximators {
        cfg.train.m0 = cfg.train.n_approximators;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.policy.kind == PolicyKind::Fixed && !(1..=cfg.train.n_approximators).contains(&cfg.policy.m) {
        return Err(usage(format!("--M {} must lie in [1, N={}]", cfg.policy.m, cfg.train.n_approximators)));
    }
    if cfg.policy.kind == PolicyKind::Adaeq && !(2..=cfg.train.n_approximators).contains(&cfg.train.m0) {
        return Err(usage(format!("--M0 {} must lie in [2, N={}]", cfg.train.m0, cfg.train.n_approximators)));
    }
    Ok(cfg)
}

/// Trains every seed of `cfg` and writes records, aggregate and manifest into `dir`.
fn train_into(cfg: &RunConfig, dir: &Path, svg: bool, command: &str) -> Result<Vec<RunRecord>, CliError> {
    let sink = Sink::new(Some(dir))?;
    let mdp = cfg.env.build()?;
    let policy = cfg.policy.resolve(cfg.train.n_approximators)?;
    let seeds: Vec<(u32, u64)> = (0..cfg.seeds).map(|k| (k, cfg.run_seed(k))).collect();
    let toml = cfg.to_toml()?;
    sink.file("config.toml", &toml)?;
    let config = json!({
        "run": cfg,
        "policy": policy.name(),
        "env_hash": env_hash(&mdp)?,
        "seeds": seeds.iter().map(|(k, s)| json!({"index": k, "seed": s})).collect::<Vec<_>>(),
    });
    tracked(&sink, manifest(command, config), |_| {
        let records: Vec<RunRecord> = seeds
            .par_iter()
            .map(|&(_, seed)| run_training(&mdp, &policy, cfg.steps, cfg.eval_every, &cfg.train, seed))
            .collect::<Result<_, _>>()?;
        for ((k, _), rec) in seeds.iter().zip(&records) {
            rec.save_rows(&dir.join(format!("run_{k}.csv")))?;
            rec.write_events(fs::File::create(dir.join(format!("events_{k}.csv")))?)?;
        }
        let agg = aggregate_runs(&records)?;
        let mut buf = Vec::new();
        agg.write_csv(&mut buf)?;
        sink.file("aggregate.csv", &String::from_utf8(buf).expect("csv output is utf-8"))?;
        if svg {
            let bias = column("bias");
            let series = vec![Series {
                name: policy.name(),
                points: agg.steps.iter().map(|&s| s as f64).zip(agg.mean[bias].iter().copied()).collect(),
            }];
            sink.file("bias.svg", &line_plot("measured estimation bias", "step", "bias", &series))?;
        }
        Ok(records)
    })
}

fn column(name: &str) -> usize {
    EVAL_COLUMNS.iter().position(|c| *c == name).expect("known column")
}

pub fn run_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&a.run)?;
    if let Some(p) = &a.policy {
        cfg.policy.kind = p.parse().map_err(|e| usage(format!("--policy: {e}")))?;
    }
    if let Some(v) = a.m0 {
        cfg.train.m0 = v;
    }
    if let Some(v) = a.c {
        cfg.policy.c = v;
    }
    if let Some(v) = a.m {
        cfg.policy.m = v;
    }
    let cfg = finish(cfg)?;
    let pool = pool(a.run.workers)?;
    let records = pool.install(|| train_into(&cfg, &a.run.out, a.run.svg, "train"))?;
    let bias = column("bias");
    for (k, r) in records.iter().enumerate() {
        if let Some(last) = r.rows.last() {
            eprintln!("seed {k}: step {} bias {:.4} M_t {}", last.step, last.column(bias), last.m_t);
        }
    }
    Ok(())
}

/// Mean over the last fifth of the logged steps.
fn tail_mean(rec: &RunRecord, col: usize) -> f64 {
    let last = rec.rows.last().map_or(0, |r| r.step) as f64;
    let tail: Vec<f64> = rec.rows.iter().filter(|r| r.step as f64 > 0.8 * last).map(|r| r.column(col)).collect();
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v.sqrt())
}

pub fn run_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let base = base_config(&a.run)?;
    let kinds: Vec<PolicyKind> = a
        .policy
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| usage(format!("--policy: {e}"))))
        .collect::<Result<_, _>>()?;
    let m0s = match &a.m0 {
        Some(t) => parse_u32_list(t).map_err(|e| usage(format!("--M0: {e}")))?,
        None => vec![base.train.m0],
    };
    let cs = match &a.c {
        Some(t) => parse_f64_list(t).map_err(|e| usage(format!("--c: {e}")))?,
        None => vec![base.policy.c],
    };
    let fixed = match &a.m {
        Some(t) => parse_u32_list(t).map_err(|e| usage(format!("--M: {e}")))?,
        None => vec![base.policy.m],
    };

    let mut cells: Vec<(String, RunConfig)> = Vec::new();
    for &kind in &kinds {
        let mut push = |label: String, edit: &dyn Fn(&mut RunConfig)| -> Result<(), CliError> {
            let mut cfg = base.clone();
            cfg.policy.kind = kind;
            edit(&mut cfg);
            cells.push((label, finish(cfg)?));
            Ok(())
        };
        match kind {
            PolicyKind::Adaeq => {
                for &m0 in &m0s {
                    for &c in &cs {
                        push(format!("adaeq_M0-{m0}_c-{c}"), &|cfg| {
                            cfg.train.m0 = m0;
                            cfg.policy.c = c;
                        })?;
                    }
                }
            }
            PolicyKind::Fixed => {
                for &m in &fixed {
                    push(format!("fixed_M-{m}"), &|cfg| cfg.policy.m = m)?;
                }
            }
            PolicyKind::Maxmin => push("maxmin".into(), &|_| {})?,
            PolicyKind::Average => push("average".into(), &|_| {})?,
        }
    }

    let sink = Sink::new(Some(&a.run.out))?;
    let config = json!({
        "cells": cells.iter().map(|(l, c)| json!({"label": l, "run": c})).collect::<Vec<_>>(),
    });
    let pool = pool(a.run.workers)?;
    tracked(&sink, manifest("sweep", config), |_| {
        let results: Vec<Vec<RunRecord>> = pool.install(|| {
            cells
                .par_iter()
                .map(|(label, cfg)| train_into(cfg, &a.run.out.join(label), a.run.svg, "sweep-cell"))
                .collect::<Result<_, _>>()
        })?;
        let (bias, q_err, ret, m_t) = (column("bias"), column("q_error"), column("return"), column("M_t"));
        let header = [
            "cell", "policy", "M0", "c", "seeds", "tail_bias_mean", "tail_bias_std", "tail_M_t_mean", "final_q_error_mean", "final_return_mean",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = cells
            .iter()
            .zip(&results)
            .map(|((label, cfg), recs)| {
                let tb: Vec<f64> = recs.iter().map(|r| tail_mean(r, bias)).collect();
                let tm: Vec<f64> = recs.iter().map(|r| tail_mean(r, m_t)).collect();
                let last = |c: usize| -> Vec<f64> { recs.iter().filter_map(|r| r.rows.last().map(|x| x.column(c))).collect() };
                let (bm, bs) = mean_std(&tb);
                vec![
                    label.clone(),
                    format!("{:?}", cfg.policy.kind).to_lowercase(),
                    cfg.train.m0.to_string(),
                    cfg.policy.c.to_string(),
                    recs.len().to_string(),
                    bm.to_string(),
                    bs.to_string(),
                    mean_std(&tm).0.to_string(),
                    mean_std(&last(q_err)).0.to_string(),
                    mean_std(&last(ret)).0.to_string(),
                ]
            })
            .collect();
        sink.file("summary.csv", &csv_string(&header, &rows)?)?;
        if a.run.svg {
            let series: Vec<Series> = cells
                .iter()
                .zip(&results)
                .filter_map(|((label, _), recs)| {
                    let agg = aggregate_runs(recs).ok()?;
                    Some(Series {
                        name: label.clone(),
                        points: agg.steps.iter().map(|&s| s as f64).zip(agg.mean[bias].iter().copied()).collect(),
                    })
                })
                .collect();
            sink.file("bias.svg", &line_plot("measured estimation bias", "step", "bias", &series))?;
        }
        Ok(())
    })
}

pub fn run_aggregate(a: &AggregateArgs) -> Result<(), CliError> {
    let records: Vec<RunRecord> = a
        .files
        .iter()
        .map(|p| RunRecord::load_rows(p).map_err(|e| usage(format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;
    let agg = aggregate_runs(&records).map_err(|e| usage(e.to_string()))?;
    match &a.out {
        Some(p) => agg.write_csv(fs::File::create(p)?)?,
        None => agg.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}
