//! Text inputs: integer ranges, number lists, environment names and run configs.

use serde::{Deserialize, Serialize};

use crate::controller::AdaptationConfig;
use crate::ensemble::{SizePolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::mdp::EnvSpec;

const MAX_LIST: usize = 1 << 16;

/// Parses `"2..12"` (inclusive), `"2,3,5"`, `"4"` or mixtures such as `"2..4,8"`.
pub fn parse_u32_list(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(Error::Parse(format!("empty item in {text:?}")));
        }
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let lo: u32 = a.trim().parse().map_err(|_| Error::Parse(format!("bad range start {a:?}")))?;
            let hi: u32 = b.trim().parse().map_err(|_| Error::Parse(format!("bad range end {b:?}")))?;
            if lo > hi {
                return Err(Error::Parse(format!("range {part} is empty")));
            }
            if (hi - lo) as usize >= MAX_LIST || out.len() + (hi - lo) as usize >= MAX_LIST {
                return Err(Error::Parse(format!("range {part} is too long")));
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| Error::Parse(format!("bad integer {part:?}")))?);
            if out.len() > MAX_LIST {
                return Err(Error::Parse("list is too long".into()));
            }
        }
    }
    Ok(out)
}

/// Comma-separated finite reals.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = text
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("bad number {p:?}")))
        })
        .collect::<Result<_>>()?;
    if out.len() > MAX_LIST {
        return Err(Error::Parse("list is too long".into()));
    }
    Ok(out)
}

/// Default reward noise for named gridworlds.
pub const GRID_NOISE: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 0.9;

/// Environment shorthands: `grid4`, `grid5x3`, `grid4-det` (no reward
/// noise), `ring12`, `random20`.
pub fn parse_env_name(name: &str) -> Result<EnvSpec> {
    let bad = || Error::Parse(format!("unknown environment {name:?}"));
    let dims = |s: &str| -> Result<usize> {
        let v: usize = s.parse().map_err(|_| bad())?;
        if (1..=1024).contains(&v) {
            Ok(v)
        } else {
            Err(bad())
        }
    };
    if let Some(rest) = name.strip_prefix("grid") {
        let (body, noise) = match rest.strip_suffix("-det") {
            Some(b) => (b, 0.0),
            None => (rest, GRID_NOISE),
        };
        let (w, h) = match body.split_once('x') {
            Some((w, h)) => (dims(w)?, dims(h)?),
            None => (dims(body)?, dims(body)?),
        };
        return Ok(EnvSpec::Gridworld { width: w, height: h, reward_noise: noise, gamma: DEFAULT_GAMMA, seed: 0 });
    }
    if let Some(rest) = name.strip_prefix("ring") {
        return Ok(EnvSpec::Ring { n_states: dims(rest)?, n_actions: 2, gamma: DEFAULT_GAMMA });
    }
    if let Some(rest) = name.strip_prefix("random") {
        let n = dims(rest)?;
        return Ok(EnvSpec::RandomMdp {
            n_states: n,
            n_actions: 4,
            branching: n.min(3),
            reward_noise: GRID_NOISE,
            gamma: DEFAULT_GAMMA,
            seed: 0,
        });
    }
    Err(bad())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Fixed,
    Maxmin,
    Adaeq,
    Average,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(PolicyKind::Fixed),
            "maxmin" => Ok(PolicyKind::Maxmin),
            "adaeq" => Ok(PolicyKind::Adaeq),
            "average" | "avg" => Ok(PolicyKind::Average),
            _ => Err(Error::Parse(format!("unknown policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Subset size for the fixed policy.
    pub m: u32,
    pub c: f64,
    pub adaptation_every: u64,
    pub horizon: usize,
    pub n_trajectories: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyKind::Adaeq, m: 2, c: 0.3, adaptation_every: 1000, horizon: 200, n_trajectories: 1 }
    }
}

impl PolicyConfig {
    pub fn resolve(&self, n_approximators: u32) -> Result<SizePolicy> {
        Ok(match self.kind {
            PolicyKind::Fixed => SizePolicy::Fixed(self.m),
            PolicyKind::Maxmin => SizePolicy::Maxmin,
            PolicyKind::Average => SizePolicy::Average,
            PolicyKind::Adaeq => {
                let a = AdaptationConfig {
                    c: self.c,
                    n_min: 2,
                    n_max: n_approximators,
                    adaptation_every: self.adaptation_every,
                    horizon: self.horizon,
                    n_trajectories: self.n_trajectories,
                };
                a.validate()?;
                SizePolicy::AdaEq(a)
            }
        })
    }
}

/// Everything needed to reproduce a set of training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub steps: u64,
    pub eval_every: u64,
    pub master_seed: u64,
    /// Number of seeds; run `k` uses the seed derived from `(master_seed, k)`.
    pub seeds: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::Gridworld { width: 4, height: 4, reward_noise: GRID_NOISE, gamma: DEFAULT_GAMMA, seed: 0 },
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            steps: 50_000,
            eval_every: 5_000,
            master_seed: 0,
            seeds: 3,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.policy.resolve(self.train.n_approximators)?;
        if self.steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps and eval_every must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("need at least one seed".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self, k: u32) -> u64 {
        crate::seeds::derive(self.master_seed, u64::from(k), "run")
    }
}
