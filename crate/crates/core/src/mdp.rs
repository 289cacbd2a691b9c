//! Finite MDPs with exact Q-values, exploration, rollouts and replay.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// A finite MDP with sparse transitions, stored row-major over `(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[s * A + a]` lists `(s', P(s'|s,a))`.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub reward_mean: Vec<f64>,
    /// Half-width of the uniform reward noise for each `(s, a)`.
    pub reward_noise: Vec<f64>,
    pub gamma: f64,
    pub terminal: Vec<bool>,
}

impl MdpSpec {
    #[inline]
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMdp(m));
        if self.n_states == 0 || self.n_actions == 0 {
            return bad("need at least one state and one action".into());
        }
        let pairs = self
            .n_states
            .checked_mul(self.n_actions)
            .ok_or_else(|| Error::InvalidMdp("state-action count overflows".into()))?;
        if self.transitions.len() != pairs || self.reward_mean.len() != pairs || self.reward_noise.len() != pairs {
            return bad(format!("expected {pairs} state-action rows"));
        }
        if self.terminal.len() != self.n_states {
            return bad(format!("expected {} terminal flags", self.n_states));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.is_empty() {
                return bad(format!("row {i} has no successors"));
            }
            let mut total = 0.0;
            for &(s, p) in row {
                if s >= self.n_states {
                    return bad(format!("row {i} points at state {s}"));
                }
                if !(p >= 0.0 && p.is_finite()) {
                    return bad(format!("row {i} has probability {p}"));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return bad(format!("row {i} sums to {total}"));
            }
        }
        if self.reward_mean.iter().any(|r| !r.is_finite()) {
            return bad("non-finite reward mean".into());
        }
        if self.reward_noise.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return bad("reward noise must be non-negative".into());
        }
        if self.terminal.iter().all(|&t| t) {
            return bad("every state is terminal".into());
        }
        Ok(())
    }

    pub fn non_terminal(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.terminal[s])
    }

    /// Sample `(r, s', done)` for taking `a` in `s`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize, bool) {
        let i = self.idx(s, a);
        let row = &self.transitions[i];
        let next = if row.len() == 1 {
            row[0].0
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = row[row.len() - 1].0;
            for &(sp, p) in row {
                acc += p;
                if u < acc {
                    pick = sp;
                    break;
                }
            }
            pick
        };
        let tau = self.reward_noise[i];
        let noise = if tau > 0.0 { tau * (2.0 * rng.random::<f64>() - 1.0) } else { 0.0 };
        (self.reward_mean[i] + noise, next, self.terminal[next])
    }

    /// Uniformly random non-terminal state.
    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let live: Vec<usize> = self.non_terminal().collect();
        live[rng.random_range(0..live.len())]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: MdpSpec = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Deterministic gridworld with a terminal goal in the far corner.
///
/// Actions are up, right, down, left; moves into a wall leave the agent in
/// place. Entering the goal pays 1 and every reward carries `U(-tau, tau)`
/// noise.
pub fn make_noisy_gridworld(width: usize, height: usize, reward_noise_tau: f64, gamma: f64, _seed: u64) -> Result<MdpSpec> {
    if width == 0 || height == 0 || width.saturating_mul(height) < 2 {
        return Err(Error::InvalidMdp(format!("gridworld {width}x{height} needs at least two cells")));
    }
    let n = width * height;
    let goal = n - 1;
    let mut transitions = Vec::with_capacity(n * 4);
    let mut reward_mean = Vec::with_capacity(n * 4);
    for s in 0..n {
        let (x, y) = (s % width, s / width);
        for a in 0..4 {
            let (nx, ny) = match a {
                0 => (x, y.saturating_sub(1)),
                1 => ((x + 1).min(width - 1), y),
                2 => (x, (y + 1).min(height - 1)),
                _ => (x.saturating_sub(1), y),
            };
            let next = if s == goal { s } else { ny * width + nx };
            transitions.push(vec![(next, 1.0)]);
            reward_mean.push(if s != goal && next == goal { 1.0 } else { 0.0 });
        }
    }
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let mdp = MdpSpec {
        n_states: n,
        n_actions: 4,
        transitions,
        reward_mean,
        reward_noise: vec![reward_noise_tau; n * 4],
        gamma,
        terminal,
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Every `(s, a)` moves uniformly to one of `branching` distinct random
/// successors; reward means are standard normal.
pub fn make_random_mdp(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    reward_noise_tau: f64,
    gamma: f64,
    seed: u64,
) -> Result<MdpSpec> {
    if branching == 0 || branching > n_states {
        return Err(Error::InvalidMdp(format!("branching {branching} must lie in [1, {n_states}]")));
    }
    let mut rng = seeds::rng(seed, 0, "random-mdp");
    let pairs = n_states * n_actions;
    let p = 1.0 / branching as f64;
    let mut transitions = Vec::with_capacity(pairs);
    let mut reward_mean = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let succ = index::sample(&mut rng, n_states, branching);
        transitions.push(succ.iter().map(|s| (s, p)).collect());
        reward_mean.push(rng.sample::<f64, _>(StandardNormal));
    }
    let mdp = MdpSpec {
        n_states,
        n_actions,
        transitions,
        reward_mean,
        reward_noise: vec![reward_noise_tau; pairs],
        gamma,
        terminal: vec![false; n_states],
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Deterministic ring: action 0 advances and pays 1, the rest stay and pay 0.
pub fn make_ring(n_states: usize, n_actions: usize, gamma: f64) -> Result<MdpSpec> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidMdp("ring needs states and actions".into()));
    }
    let mut transitions = Vec::new();
    let mut reward_mean = Vec::new();
    for s in 0..n_states {
        for a in 0..n_actions {
            if a == 0 {
                transitions.push(vec![((s + 1) % n_states, 1.0)]);
                reward_mean.push(1.0);
            } else {
                transitions.push(vec![(s, 1.0)]);
                reward_mean.push(0.0);
            }
        }
    }
    let mdp = MdpSpec {
        n_states,
        n_actions,
        transitions,
        reward_mean,
        reward_noise: vec![0.0; n_states * n_actions],
        gamma,
        terminal: vec![false; n_states],
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Serializable recipe for an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Gridworld {
        width: usize,
        height: usize,
        reward_noise: f64,
        gamma: f64,
        #[serde(default)]
        seed: u64,
    },
    RandomMdp {
        n_states: usize,
        n_actions: usize,
        branching: usize,
        reward_noise: f64,
        gamma: f64,
        seed: u64,
    },
    Ring {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
    },
    Explicit(MdpSpec),
}

impl EnvSpec {
    pub fn build(&self) -> Result<MdpSpec> {
        match self {
            EnvSpec::Gridworld { width, height, reward_noise, gamma, seed } => {
                make_noisy_gridworld(*width, *height, *reward_noise, *gamma, *seed)
            }
            EnvSpec::RandomMdp { n_states, n_actions, branching, reward_noise, gamma, seed } => {
                make_random_mdp(*n_states, *n_actions, *branching, *reward_noise, *gamma, *seed)
            }
            EnvSpec::Ring { n_states, n_actions, gamma } => make_ring(*n_states, *n_actions, *gamma),
            EnvSpec::Explicit(mdp) => {
                mdp.validate()?;
                Ok(mdp.clone())
            }
        }
    }
}

/// Dense action-value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn filled(n_states: usize, n_actions: usize, v: f64) -> Self {
        Self { n_states, n_actions, values: vec![v; n_states * n_actions] }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max-norm distance over the states accepted by `keep`.
    pub fn max_abs_diff(&self, other: &QTable, keep: impl Fn(usize) -> bool) -> f64 {
        (0..self.n_states)
            .filter(|&s| keep(s))
            .flat_map(|s| self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// Greedy with respect to the optimal action values.
    Optimal,
    /// One action per state.
    Deterministic(Vec<usize>),
    /// `probs[s * A + a]`.
    Stochastic(Vec<f64>),
    Uniform,
}

const VI_MAX_ITER: usize = 200_000;
const Q_TOL: f64 = 1e-10;

fn backup(mdp: &MdpSpec, v: &[f64], s: usize, a: usize) -> f64 {
    let i = mdp.idx(s, a);
    let future: f64 = mdp.transitions[i].iter().map(|&(sp, p)| p * v[sp]).sum();
    mdp.reward_mean[i] + mdp.gamma * future
}

fn q_from_v(mdp: &MdpSpec, v: &[f64]) -> QTable {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in mdp.non_terminal() {
        for a in 0..mdp.n_actions {
            q.set(s, a, backup(mdp, v, s, a));
        }
    }
    q
}

/// Exact action values of `policy`; terminal states are worth zero.
pub fn exact_q_values(mdp: &MdpSpec, policy: &Policy) -> Result<QTable> {
    mdp.validate()?;
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let probs: Vec<f64> = match policy {
        Policy::Optimal => return value_iteration(mdp),
        Policy::Uniform => vec![1.0 / na as f64; n * na],
        Policy::Deterministic(acts) => {
            if acts.len() != n || acts.iter().any(|&a| a >= na) {
                return Err(Error::domain("deterministic policy must give a valid action per state"));
            }
            let mut p = vec![0.0; n * na];
            for (s, &a) in acts.iter().enumerate() {
                p[s * na + a] = 1.0;
            }
            p
        }
        Policy::Stochastic(p) => {
            if p.len() != n * na {
                return Err(Error::domain("stochastic policy has the wrong shape"));
            }
            for s in 0..n {
                let row = &p[s * na..(s + 1) * na];
                if row.iter().any(|x| !(*x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::domain(format!("policy row {s} is not a distribution")));
                }
            }
            p.clone()
        }
    };
    // (I - gamma P_pi) v = r_pi over live states
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in mdp.non_terminal() {
        for a in 0..na {
            let w = probs[s * na + a];
            if w == 0.0 {
                continue;
            }
            let i = mdp.idx(s, a);
            r[s] += w * mdp.reward_mean[i];
            for &(sp, p) in &mdp.transitions[i] {
                if !mdp.terminal[sp] {
                    m[(s, sp)] -= mdp.gamma * w * p;
                }
            }
        }
    }
    let v = m
        .lu()
        .solve(&r)
        .ok_or(Error::NonConvergence { iterations: 0, residual: f64::INFINITY })?;
    let v: Vec<f64> = (0..n).map(|s| if mdp.terminal[s] { 0.0 } else { v[s] }).collect();
    let q = q_from_v(mdp, &v);
    let residual = policy_residual(mdp, &q, &probs);
    if residual > Q_TOL * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
        return Err(Error::NonConvergence { iterations: 0, residual });
    }
    Ok(q)
}

fn policy_residual(mdp: &MdpSpec, q: &QTable, probs: &[f64]) -> f64 {
    let na = mdp.n_actions;
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| if mdp.terminal[s] { 0.0 } else { (0..na).map(|a| probs[s * na + a] * q.get(s, a)).sum() })
        .collect();
    let t = q_from_v(mdp, &v);
    q.max_abs_diff(&t, |_| true)
}

fn value_iteration(mdp: &MdpSpec) -> Result<QTable> {
    let mut v = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..VI_MAX_ITER {
        residual = 0.0;
        let mut next = vec![0.0; mdp.n_states];
        for s in mdp.non_terminal() {
            let best = (0..mdp.n_actions).map(|a| backup(mdp, &v, s, a)).fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        v = next;
        // the error after this sweep is at most gamma/(1-gamma) times the change
        if residual * mdp.gamma / (1.0 - mdp.gamma) <= Q_TOL * 1e-2 || residual == 0.0 {
            return Ok(q_from_v(mdp, &v));
        }
    }
    Err(Error::NonConvergence { iterations: VI_MAX_ITER, residual })
}

/// Largest violation of `Q = T Q` for the optimality operator.
pub fn bellman_optimality_residual(mdp: &MdpSpec, q: &QTable) -> f64 {
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| if mdp.terminal[s] { 0.0 } else { q.max_row(s) })
        .collect();
    q.max_abs_diff(&q_from_v(mdp, &v), |_| true)
}

/// Greedy policy extracted from a Q-table, lowest index on ties.
pub fn greedy_policy(q: &QTable) -> Vec<usize> {
    (0..q.n_states)
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for (a, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Argmax of `row` with ties broken uniformly at random.
pub fn argmax_random_tie<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = row.iter().filter(|v| **v == best).count();
    if ties <= 1 {
        return row.iter().position(|v| *v == best).unwrap_or(0);
    }
    let pick = rng.random_range(0..ties);
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v == best)
        .nth(pick)
        .map(|(a, _)| a)
        .unwrap_or(0)
}

/// With probability `epsilon` a uniform action, otherwise a greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(row: &[f64], epsilon: f64, rng: &mut R) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..row.len())
    } else {
        argmax_random_tie(row, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
}

/// One test rollout with the truncated discounted return from every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTrajectory {
    pub pairs: Vec<(usize, usize)>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Rolls out `policy` for steps `0..=horizon` from `start`, stopping early
/// on reaching a terminal state. `returns[t] = sum_{k>=t} gamma^(k-t) r_k`.
pub fn rollout_mc_returns<R, P>(mdp: &MdpSpec, start: usize, mut policy: P, horizon: usize, rng: &mut R) -> Result<TestTrajectory>
where
    R: Rng + ?Sized,
    P: FnMut(usize, &mut R) -> usize,
{
    if horizon < 1 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    if start >= mdp.n_states || mdp.terminal[start] {
        return Err(Error::domain(format!("start state {start} is not a live state")));
    }
    let mut pairs = Vec::with_capacity(horizon + 1);
    let mut rewards = Vec::with_capacity(horizon + 1);
    let mut s = start;
    for _ in 0..=horizon {
        let a = policy(s, rng);
        let (r, next, done) = mdp.step(s, a, rng);
        pairs.push((s, a));
        rewards.push(r);
        if done {
            break;
        }
        s = next;
    }
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + mdp.gamma * acc;
        returns[t] = acc;
    }
    Ok(TestTrajectory { pairs, rewards, returns })
}

/// Bounded FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("replay capacity must be positive"));
        }
        Ok(Self { capacity, storage: VecDeque::with_capacity(capacity.min(1 << 16)) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    pub fn newest(&self) -> Option<&Transition> {
        self.storage.back()
    }

    /// `min(batch, len)` distinct positions drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = batch.min(self.storage.len());
        index::sample(rng, self.storage.len(), n).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Transition> {
        self.sample_indices(batch, rng).into_iter().map(|i| self.storage[i]).collect()
    }
}
