use std::path::PathBuf;

use adaeq::config::{parse_f64_list, parse_u32_list};
use adaeq::svg::{line_plot, Series};
use adaeq::toy::{bias_sweep, estimation_bias, iterated_error_drift, SampleScheme, SweepAxis, ToyConfig};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::output::{csv_string, manifest, pool, tracked, Sink};
use crate::{usage, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    Tau,
    Actions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Sampling {
    Uniform,
    Stratified,
    Even,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    /// Ensemble sizes of the min proxy.
    #[arg(long = "M", default_value = "2,3,4,5")]
    m: String,
    /// Noise level; each approximator draws its half-width from `U(0, tau)`.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 2)]
    actions: u32,
    /// Number of approximators.
    #[arg(long = "N", default_value_t = 5)]
    n: u32,
    #[arg(long, default_value_t = 10)]
    samples: u32,
    #[arg(long, default_value_t = 6)]
    degree: u32,
    #[arg(long, value_enum, default_value = "stratified")]
    sampling: Sampling,
    #[arg(long, default_value_t = 500)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep the bias over noise levels or action counts.
    #[arg(long, value_enum)]
    sweep: Option<Axis>,
    /// Sweep values; defaults to `0.5,1,1.5,2,2.5` for tau and `2,4,8` for actions.
    #[arg(long)]
    values: Option<String>,
    /// Add the row chosen by the adaptive size rule to a sweep.
    #[arg(long)]
    adaptive: bool,
    /// Per-state error curve for each M instead of scalar biases.
    #[arg(long, conflicts_with = "sweep")]
    curve: bool,
    /// Repeated refitting from each approximator's own previous fit, one
    /// approximator per listed noise level.
    #[arg(long, conflicts_with_all = ["sweep", "curve"])]
    drift: Option<String>,
    #[arg(long, default_value_t = 10)]
    iterations: u32,
    /// Add fresh noise at every refit rather than only the first.
    #[arg(long)]
    fresh_noise: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

fn template(a: &ToyArgs) -> Result<ToyConfig, CliError> {
    let mut cfg = ToyConfig::default().with_tau(a.tau).with_actions(a.actions).with_seed(a.seed);
    cfg.n_approximators = a.n;
    cfg.n_samples_per_fit = a.samples;
    cfg.poly_degree = a.degree;
    cfg.sampling = match a.sampling {
        Sampling::Uniform => SampleScheme::Uniform,
        Sampling::Stratified => SampleScheme::Stratified,
        Sampling::Even => SampleScheme::Even,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    Ok(cfg)
}

pub fn run(a: &ToyArgs) -> Result<(), CliError> {
    let cfg = template(a)?;
    let ms = parse_u32_list(&a.m).map_err(|e| usage(format!("--M: {e}")))?;
    if let Some(&m) = ms.iter().find(|&&m| m < 1 || m > cfg.n_approximators) {
        return Err(usage(format!("--M value {m} must lie in [1, N={}]", cfg.n_approximators)));
    }
    let axis = match a.sweep {
        None => None,
        Some(Axis::Tau) => Some(SweepAxis::Tau(
            parse_f64_list(a.values.as_deref().unwrap_or("0.5,1,1.5,2,2.5")).map_err(|e| usage(format!("--values: {e}")))?,
        )),
        Some(Axis::Actions) => Some(SweepAxis::Actions(
            parse_u32_list(a.values.as_deref().unwrap_or("2,4,8")).map_err(|e| usage(format!("--values: {e}")))?,
        )),
    };
    let drift_taus = a
        .drift
        .as_deref()
        .map(|t| parse_f64_list(t).map_err(|e| usage(format!("--drift: {e}"))))
        .transpose()?;
    let sink = Sink::new(a.out.as_deref())?;
    let pool = pool(a.workers)?;
    let config = json!({
        "toy": cfg,
        "M": ms,
        "trials": a.trials,
        "sweep": axis,
        "adaptive": a.adaptive,
        "curve": a.curve,
        "drift": drift_taus,
        "iterations": a.iterations,
        "fresh_noise": a.fresh_noise,
    });

    tracked(&sink, manifest("toy", config), |_| {
        pool.install(|| match (&axis, &drift_taus) {
            (_, Some(taus)) => drift(a, &cfg, taus, &sink),
            (Some(axis), None) => sweep(a, &cfg, &ms, axis, &sink),
            (None, None) if a.curve => curve(a, &cfg, &ms, &sink),
            (None, None) => scalar(a, &cfg, &ms, &sink),
        })
    })
}

fn scalar(a: &ToyArgs, cfg: &ToyConfig, ms: &[u32], sink: &Sink) -> Result<(), CliError> {
    let results: Vec<_> = ms.par_iter().map(|&m| estimation_bias(cfg, m, a.trials)).collect::<Result<_, _>>()?;
    let header = ["M", "bias", "std_error"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = ms
        .iter()
        .zip(&results)
        .map(|(m, b)| vec![m.to_string(), b.bias.to_string(), b.std_error.to_string()])
        .collect();
    sink.emit("toy.csv", &csv_string(&header, &rows)?)
}

fn curve(a: &ToyArgs, cfg: &ToyConfig, ms: &[u32], sink: &Sink) -> Result<(), CliError> {
    let results: Vec<_> = ms.par_iter().map(|&m| estimation_bias(cfg, m, a.trials)).collect::<Result<_, _>>()?;
    let mut header = vec!["state".to_string()];
    header.extend(ms.iter().map(|m| format!("M={m}")));
    let rows: Vec<Vec<String>> = cfg
        .state_grid
        .iter()
        .enumerate()
        .map(|(i, s)| std::iter::once(s.to_string()).chain(results.iter().map(|b| b.curve[i].to_string())).collect())
        .collect();
    sink.emit("curve.csv", &csv_string(&header, &rows)?)?;
    if a.svg {
        let series: Vec<Series> = ms
            .iter()
            .zip(&results)
            .map(|(m, b)| Series { name: format!("M={m}"), points: cfg.state_grid.iter().copied().zip(b.curve.iter().copied()).collect() })
            .collect();
        sink.file("curve.svg", &line_plot("estimation error of the min proxy", "state", "error", &series))?;
    }
    Ok(())
}

fn sweep(a: &ToyArgs, cfg: &ToyConfig, ms: &[u32], axis: &SweepAxis, sink: &Sink) -> Result<(), CliError> {
    let cells = bias_sweep(cfg, ms, axis, a.trials, a.adaptive)?;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for c in &cells {
        if !values.contains(&c.axis_value) {
            values.push(c.axis_value);
        }
        if !labels.contains(&c.row.label()) {
            labels.push(c.row.label());
        }
    }
    let mut header = vec!["M".to_string()];
    header.extend(values.iter().map(|v| format!("{}={v}", axis.name())));
    let matrix: Vec<Vec<String>> = labels
        .iter()
        .map(|l| {
            std::iter::once(l.clone())
                .chain(values.iter().map(|v| {
                    cells
                        .iter()
                        .find(|c| &c.row.label() == l && c.axis_value == *v)
                        .map(|c| c.bias.to_string())
                        .unwrap_or_default()
                }))
                .collect()
        })
        .collect();
    sink.emit("sweep.csv", &csv_string(&header, &matrix)?)?;
    let long_header = [axis.name(), "M", "size", "bias", "std_error"].map(String::from).to_vec();
    let long: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![c.axis_value.to_string(), c.row.label(), c.row.size().to_string(), c.bias.to_string(), c.std_error.to_string()])
        .collect();
    sink.file("sweep_cells.csv", &csv_string(&long_header, &long)?)?;
    if a.svg {
        let series: Vec<Series> = labels
            .iter()
            .map(|l| Series {
                name: format!("M={l}"),
                points: cells.iter().filter(|c| &c.row.label() == l).map(|c| (c.axis_value, c.bias)).collect(),
            })
            .collect();
        sink.file("sweep.svg", &line_plot("bias of the min proxy", axis.name(), "bias", &series))?;
    }
    Ok(())
}

fn drift(a: &ToyArgs, cfg: &ToyConfig, taus: &[f64], sink: &Sink) -> Result<(), CliError> {
    let points = iterated_error_drift(cfg, taus, a.iterations, a.fresh_noise)?;
    let header = ["iteration", "approximator", "tau", "mean", "std"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.iteration.to_string(), p.approximator.to_string(), p.tau.to_string(), p.mean.to_string(), p.std.to_string()])
        .collect();
    sink.emit("drift.csv", &csv_string(&header, &rows)?)?;
    if a.svg {
        let series: Vec<Series> = taus
            .iter()
            .enumerate()
            .map(|(j, t)| Series {
                name: format!("tau={t}"),
                points: points.iter().filter(|p| p.approximator == j).map(|p| (f64::from(p.iteration), p.std)).collect(),
            })
            .collect();
        sink.file("drift.svg", &line_plot("error spread under repeated refitting", "iteration", "error std", &series))?;
    }
    Ok(())
}
