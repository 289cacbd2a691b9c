use std::path::PathBuf;

use adaeq::bias::{bound_table, critical_points, determine_c, sweep_grid, BoundModel, Thm1LowerForm, Thm2UpperForm};
use adaeq::config::{parse_f64_list, parse_u32_list};
use adaeq::svg::{line_plot, Series};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::output::{csv_string, manifest, opt, tracked, Sink};
use crate::{usage, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LowerForm {
    Derived,
    Stated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpperForm {
    Crossing,
    Printed,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// 1: two error distributions; 2: heterogeneous half-widths.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    thm: u8,
    /// Wide half-width (`--thm 1`).
    #[arg(long)]
    tau1: Option<f64>,
    /// Narrow half-width (`--thm 1`).
    #[arg(long)]
    tau2: Option<f64>,
    /// Number of wide approximators in the target (`--thm 1`).
    #[arg(long = "K")]
    k: Option<u32>,
    /// Half-width pattern, cycled to fill M slots (`--thm 2`).
    #[arg(long)]
    taus: Option<String>,
    /// Number of actions.
    #[arg(long = "A")]
    actions: u32,
    /// Ensemble sizes, e.g. `2..12`.
    #[arg(long = "M", default_value = "2..12")]
    m: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "derived")]
    lower_form: LowerForm,
    #[arg(long = "thm2-upper-form", value_enum, default_value = "crossing")]
    upper_form: UpperForm,
    /// Monte Carlo samples per row; 0 skips the oracle.
    #[arg(long, default_value_t = 0)]
    mc: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `start:stop:step` sweep of the wide (largest) half-width for the tolerance interval.
    #[arg(long)]
    c_sweep: Option<String>,
    /// Output directory; without it the CSV goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

fn build_model(a: &BoundsArgs, wide: Option<f64>) -> Result<BoundModel, CliError> {
    if a.thm == 1 {
        let tau1 = wide.or(a.tau1).ok_or_else(|| usage("--tau1 is required for --thm 1"))?;
        let tau2 = a.tau2.ok_or_else(|| usage("--tau2 is required for --thm 1"))?;
        let k = a.k.ok_or_else(|| usage("--K is required for --thm 1"))?;
        if !(tau2 > 0.0 && tau1 > tau2) {
            return Err(usage(format!("--tau1 must exceed --tau2 > 0, got {tau1} and {tau2}")));
        }
        if k == 0 {
            return Err(usage("--K must be at least 1"));
        }
        Ok(BoundModel::TwoDistributions {
            tau1,
            tau2,
            k,
            actions: a.actions,
            gamma: a.gamma,
            lower_form: match a.lower_form {
                LowerForm::Derived => Thm1LowerForm::Derived,
                LowerForm::Stated => Thm1LowerForm::Stated,
            },
        })
    } else {
        let text = a.taus.as_deref().ok_or_else(|| usage("--taus is required for --thm 2"))?;
        let mut taus = parse_f64_list(text).map_err(|e| usage(format!("--taus: {e}")))?;
        if taus.iter().any(|t| *t <= 0.0) {
            return Err(usage("--taus must be positive"));
        }
        if let Some(w) = wide {
            let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            taus.iter_mut().filter(|t| **t == hi).for_each(|t| *t = w);
        }
        Ok(BoundModel::Heterogeneous {
            taus,
            actions: a.actions,
            gamma: a.gamma,
            upper_form: match a.upper_form {
                UpperForm::Crossing => Thm2UpperForm::Crossing,
                UpperForm::Printed => Thm2UpperForm::Printed,
            },
        })
    }
}

fn parse_sweep(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--c-sweep expects start:stop:step, got {text:?}")))?;
    match parts.as_slice() {
        [start, stop, step] if *step > 0.0 && stop >= start && (stop - start) / step < 1e6 => Ok(sweep_grid(*start, *stop, *step)),
        _ => Err(usage(format!("--c-sweep expects start:stop:step with step > 0, got {text:?}"))),
    }
}

pub fn run(a: &BoundsArgs) -> Result<(), CliError> {
    if a.actions == 0 {
        return Err(usage("--A must be at least 1"));
    }
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(usage("--gamma must lie in (0, 1]"));
    }
    let ms = parse_u32_list(&a.m).map_err(|e| usage(format!("--M: {e}")))?;
    let (lo, hi) = (*ms.iter().min().expect("non-empty"), *ms.iter().max().expect("non-empty"));
    if lo == 0 {
        return Err(usage("--M values must be at least 1"));
    }
    let model = build_model(a, None)?;
    let grid = a.c_sweep.as_deref().map(parse_sweep).transpose()?;
    if let Some(g) = &grid {
        for &x in g {
            build_model(a, Some(x)).map_err(|e| match e {
                CliError::Usage(m) => usage(format!("--c-sweep value {x}: {m}")),
                other => other,
            })?;
        }
    }
    let sink = Sink::new(a.out.as_deref())?;
    let config = json!({
        "model": model,
        "M": ms,
        "mc_samples": a.mc,
        "seed": a.seed,
        "c_sweep": grid,
    });

    tracked(&sink, manifest("bounds", config), |m| {
        let mc = (a.mc > 0).then_some((a.mc, a.seed));
        let rows: Vec<_> = bound_table(&model, lo..=hi, mc)?.into_iter().filter(|r| ms.contains(&r.m)).collect();
        let header: Vec<String> = ["M", "lower", "upper", "mc_mean", "mc_std_error"].map(String::from).to_vec();
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.m.to_string(),
                    opt(r.bounds.lower),
                    opt(r.bounds.upper),
                    opt(r.mc.map(|e| e.mean)),
                    opt(r.mc.map(|e| e.std_error)),
                ]
            })
            .collect();
        sink.emit("bounds.csv", &csv_string(&header, &body)?)?;

        let cp = critical_points(&model, lo..=hi);
        let interval = grid.as_ref().and_then(|g| determine_c(g, |x| model_wide(a, x), lo..=hi));
        let show = |v: Option<u32>| v.map_or("none".to_string(), |m| m.to_string());
        let mut summary = format!("M_l={} M_u={}", show(cp.m_lower), show(cp.m_upper));
        if grid.is_some() {
            match interval {
                Some(c) => summary += &format!(" c_interval=[{}, {}]", c.low, c.high),
                None => summary += " c_interval=empty",
            }
        }
        eprintln!("{summary}");
        let summary_json = json!({ "m_lower": cp.m_lower, "m_upper": cp.m_upper, "c_interval": interval });
        sink.file("summary.json", &(serde_json::to_string_pretty(&summary_json).expect("json value") + "\n"))?;
        m["summary"] = summary_json;

        if a.svg {
            let pick = |f: &dyn Fn(&adaeq::bias::BoundRow) -> Option<f64>| -> Vec<(f64, f64)> {
                rows.iter().filter_map(|r| f(r).map(|v| (f64::from(r.m), v))).collect()
            };
            let mut series = vec![
                Series { name: "lower".into(), points: pick(&|r| r.bounds.lower) },
                Series { name: "upper".into(), points: pick(&|r| r.bounds.upper) },
            ];
            if mc.is_some() {
                series.push(Series { name: "oracle".into(), points: pick(&|r| r.mc.map(|e| e.mean)) });
            }
            sink.file("bounds.svg", &line_plot("estimation bias bounds", "ensemble size M", "bias", &series))?;
        }
        Ok(())
    })
}

fn model_wide(a: &BoundsArgs, x: f64) -> BoundModel {
    build_model(a, Some(x)).expect("arguments validated before the sweep")
}
