//! Tabular ensemble Q-learning with a pluggable in-target size policy.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{adapt_size, characterize_error, AdaptationConfig, AdaptationEvent};
use crate::diagnostics::{env_hash, measure_bias, measure_return, BiasMode, EvalRow, RunMeta, RunRecord};
use crate::error::{Error, Result};
use crate::mdp::{epsilon_greedy, exact_q_values, MdpSpec, Policy, QTable, ReplayBuffer, Transition};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "tau")]
pub enum InitScheme {
    Zeros,
    /// i.i.d. `U(-tau0, tau0)` entries.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizePolicy {
    Fixed(u32),
    /// Minimum over all `N` approximators.
    Maxmin,
    AdaEq(AdaptationConfig),
    /// Mean over all `N` approximators instead of a minimum.
    Average,
}

impl SizePolicy {
    pub fn name(&self) -> String {
        match self {
            SizePolicy::Fixed(m) => format!("fixed-{m}"),
            SizePolicy::Maxmin => "maxmin".into(),
            SizePolicy::AdaEq(c) => format!("adaeq-c{}", c.c),
            SizePolicy::Average => "average".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub tables: Vec<QTable>,
    pub current_m: u32,
    pub alpha: f64,
}

impl EnsembleState {
    pub fn n(&self) -> usize {
        self.tables.len()
    }
}

/// `N` independently initialised tables. `M0` must lie in `[2, N]`, except
/// that a single approximator runs with `M0 = 1`.
pub fn init_ensemble(n: u32, m0: u32, mdp: &MdpSpec, scheme: InitScheme, alpha: f64, seed: u64) -> Result<EnsembleState> {
    let valid_m = if n == 1 { m0 == 1 } else { (2..=n).contains(&m0) };
    if n == 0 || !valid_m {
        return Err(Error::Config(format!("M0={m0} must lie in [2, N={n}]")));
    }
    fresh_state(n, m0, mdp, scheme, alpha, seed)
}

fn fresh_state(n: u32, m: u32, mdp: &MdpSpec, scheme: InitScheme, alpha: f64, seed: u64) -> Result<EnsembleState> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("step size must lie in (0, 1], got {alpha}")));
    }
    let tables = (0..u64::from(n))
        .map(|i| {
            let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
            if let InitScheme::Uniform(tau0) = scheme {
                let mut rng = seeds::rng(seed, i, "init");
                for s in mdp.non_terminal() {
                    for a in 0..mdp.n_actions {
                        q.set(s, a, tau0 * (2.0 * rng.random::<f64>() - 1.0));
                    }
                }
            }
            q
        })
        .collect();
    Ok(EnsembleState { tables, current_m: m, alpha })
}

/// Minimum of the selected tables at `(s, a)`.
pub fn proxy_q(state: &EnsembleState, subset: &[usize], s: usize, a: usize) -> f64 {
    subset.iter().map(|&i| state.tables[i].get(s, a)).fold(f64::INFINITY, f64::min)
}

/// Mean of all tables at `(s, a)`.
pub fn average_proxy_q(state: &EnsembleState, s: usize, a: usize) -> f64 {
    state.tables.iter().map(|q| q.get(s, a)).sum::<f64>() / state.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyKind {
    Min,
    Average,
}

fn proxy_row(state: &EnsembleState, kind: ProxyKind, subset: &[usize], s: usize) -> Vec<f64> {
    let na = state.tables[0].n_actions;
    (0..na)
        .map(|a| match kind {
            ProxyKind::Min => proxy_q(state, subset, s, a),
            ProxyKind::Average => average_proxy_q(state, s, a),
        })
        .collect()
}

fn proxy_max(state: &EnsembleState, kind: ProxyKind, subset: &[usize], s: usize) -> f64 {
    let na = state.tables[0].n_actions;
    (0..na)
        .map(|a| match kind {
            ProxyKind::Min => proxy_q(state, subset, s, a),
            ProxyKind::Average => average_proxy_q(state, s, a),
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Uniform subset of `m` distinct indices out of `n`.
pub fn draw_subset<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, n, m).into_vec()
}

/// Where the agent currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvCursor {
    pub state: usize,
    pub episode_len: usize,
}

impl EnvCursor {
    pub fn start<R: Rng + ?Sized>(mdp: &MdpSpec, rng: &mut R) -> Self {
        Self { state: mdp.random_start(rng), episode_len: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub batch_size: usize,
    pub epsilon: f64,
    /// Act uniformly and skip updates.
    pub warmup: bool,
    pub episode_cap: usize,
    pub shared_batch: bool,
    pub update_one_random: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub transition: Transition,
    pub subset: Vec<usize>,
}

/// One iteration: draw a subset of size `M_t`, act, store, and update the
/// approximators from replayed mini-batches toward
/// `y = r + gamma * max_a' proxy(s', a')` (`y = r` at terminal `s'`).
pub fn training_step<R: Rng + ?Sized>(
    state: &mut EnsembleState,
    mdp: &MdpSpec,
    buffer: &mut ReplayBuffer,
    cursor: &mut EnvCursor,
    kind: ProxyKind,
    params: &StepParams,
    rng: &mut R,
) -> StepLog {
    let n = state.n();
    let m = (state.current_m as usize).clamp(1, n);
    let subset = draw_subset(n, m, rng);

    let s = cursor.state;
    let a = if params.warmup {
        rng.random_range(0..mdp.n_actions)
    } else {
        epsilon_greedy(&proxy_row(state, kind, &subset, s), params.epsilon, rng)
    };
    let (r, s_next, done) = mdp.step(s, a, rng);
    let transition = Transition { s, a, r, s_next, done };
    buffer.push(transition);

    cursor.episode_len += 1;
    if done || cursor.episode_len >= params.episode_cap {
        *cursor = EnvCursor::start(mdp, rng);
    } else {
        cursor.state = s_next;
    }

    if !params.warmup && buffer.len() >= params.batch_size {
        let learners: Vec<usize> = if params.update_one_random {
            vec![rng.random_range(0..n)]
        } else {
            (0..n).collect()
        };
        let shared = params.shared_batch.then(|| buffer.sample_indices(params.batch_size, rng));
        let gamma = mdp.gamma;
        let alpha = state.alpha;
        // every target is computed before any table moves
        let mut updates = Vec::new();
        for i in learners {
            let batch = match &shared {
                Some(b) => b.clone(),
                None => buffer.sample_indices(params.batch_size, rng),
            };
            for j in batch {
                let t = *buffer.get(j).expect("sampled index in range");
                let y = if t.done { t.r } else { t.r + gamma * proxy_max(state, kind, &subset, t.s_next) };
                updates.push((i, t.s, t.a, y));
            }
        }
        for (i, s, a, y) in updates {
            let q = &mut state.tables[i];
            let old = q.get(s, a);
            q.set(s, a, (1.0 - alpha) * old + alpha * y);
        }
    }
    StepLog { transition, subset }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, decay_fraction: 0.5 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        let horizon = self.decay_fraction * total as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_approximators: u32,
    pub m0: u32,
    pub alpha: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub epsilon: EpsilonSchedule,
    pub episode_cap: usize,
    pub init: InitScheme,
    pub shared_batch: bool,
    pub update_one_random: bool,
    /// Test trajectory length for bias and error measurements.
    pub eval_horizon: usize,
    pub eval_trajectories: u32,
    pub return_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_approximators: 10,
            m0: 4,
            alpha: 0.1,
            batch_size: 4,
            buffer_capacity: 10_000,
            warmup_steps: 500,
            epsilon: EpsilonSchedule::default(),
            episode_cap: 100,
            init: InitScheme::Zeros,
            shared_batch: false,
            update_one_random: false,
            eval_horizon: 200,
            eval_trajectories: 1,
            return_cap: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the buffer".into()));
        }
        if self.episode_cap == 0 || self.eval_horizon < 2 || self.return_cap == 0 {
            return Err(Error::Config("episode cap, eval horizon (>= 2) and return cap must be positive".into()));
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end) && e.decay_fraction >= 0.0) {
            return Err(Error::Config("epsilon schedule must stay in [0, 1]".into()));
        }
        Ok(())
    }
}

fn initial_size(policy: &SizePolicy, config: &TrainConfig) -> Result<(u32, ProxyKind)> {
    let n = config.n_approximators;
    Ok(match policy {
        SizePolicy::Fixed(m) => {
            if *m < 1 || *m > n {
                return Err(Error::Config(format!("fixed size {m} must lie in [1, N={n}]")));
            }
            (*m, ProxyKind::Min)
        }
        SizePolicy::Maxmin => (n, ProxyKind::Min),
        SizePolicy::AdaEq(a) => {
            a.validate()?;
            if a.n_max != n {
                return Err(Error::Config(format!("adaptation range ends at {} but N={n}", a.n_max)));
            }
            (config.m0, ProxyKind::Min)
        }
        SizePolicy::Average => (n, ProxyKind::Average),
    })
}

/// Trains an ensemble for `n_steps` environment steps, evaluating every
/// `eval_every` steps and, for the adaptive policy, resizing the in-target
/// ensemble every `adaptation_every` steps after warmup.
pub fn run_training(
    mdp: &MdpSpec,
    policy: &SizePolicy,
    n_steps: u64,
    eval_every: u64,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunRecord> {
    mdp.validate()?;
    config.validate()?;
    if eval_every == 0 {
        return Err(Error::Config("eval_every must be positive".into()));
    }
    let (m0, kind) = initial_size(policy, config)?;
    let mut state = match policy {
        SizePolicy::AdaEq(_) => init_ensemble(config.n_approximators, m0, mdp, config.init, config.alpha, seed)?,
        _ => fresh_state(config.n_approximators, m0, mdp, config.init, config.alpha, seed)?,
    };

    let q_star = exact_q_values(mdp, &Policy::Optimal)?;
    let mut train_rng: ChaCha8Rng = seeds::rng(seed, 0, "train");
    let mut adapt_rng: ChaCha8Rng = seeds::rng(seed, 0, "adapt");
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut cursor = EnvCursor::start(mdp, &mut train_rng);

    let mut record = RunRecord {
        meta: RunMeta { seed, policy: policy.name(), env_hash: env_hash(mdp)? },
        ..Default::default()
    };
    let clock = Instant::now();

    for step in 1..=n_steps {
        let params = StepParams {
            batch_size: config.batch_size,
            epsilon: config.epsilon.at(step - 1, n_steps),
            warmup: step <= config.warmup_steps,
            episode_cap: config.episode_cap,
            shared_batch: config.shared_batch,
            update_one_random: config.update_one_random,
        };
        training_step(&mut state, mdp, &mut buffer, &mut cursor, kind, &params, &mut train_rng);

        if let SizePolicy::AdaEq(a) = policy {
            if step > config.warmup_steps && step % a.adaptation_every == 0 {
                let est = characterize_error(&state.tables, mdp, a.horizon, a.n_trajectories, &mut adapt_rng)?;
                let (m_next, branch) = adapt_size(state.current_m, est.tau_tilde, a, &mut adapt_rng);
                record.events.push(AdaptationEvent {
                    iteration: step,
                    tau_tilde: est.tau_tilde,
                    m_prev: state.current_m,
                    m_next,
                    branch,
                });
                state.current_m = m_next;
            }
        }

        if step % eval_every == 0 || step == n_steps {
            let mut eval_rng = seeds::rng(seed, step, "eval");
            record.rows.push(evaluate(&state, mdp, &q_star, kind, step, config, &mut eval_rng, &clock)?);
        }
    }
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    state: &EnsembleState,
    mdp: &MdpSpec,
    q_star: &QTable,
    kind: ProxyKind,
    step: u64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    clock: &Instant,
) -> Result<EvalRow> {
    let h = config.eval_horizon;
    let k = config.eval_trajectories;
    let tau_tilde = characterize_error(&state.tables, mdp, h, k, rng)?.tau_tilde;
    let bias = measure_bias(&state.tables, mdp, h, &BiasMode::MeanQ, k, rng)?;
    let subset = draw_subset(state.n(), (state.current_m as usize).clamp(1, state.n()), rng);
    let mode = match kind {
        ProxyKind::Min => BiasMode::MinOver(&subset),
        ProxyKind::Average => BiasMode::MeanQ,
    };
    let proxy_bias = measure_bias(&state.tables, mdp, h, &mode, k, rng)?;
    let ret = measure_return(&state.tables, mdp, config.return_cap, rng)?;
    let q_error = state
        .tables
        .iter()
        .map(|q| q.max_abs_diff(q_star, |s| !mdp.terminal[s]))
        .fold(0.0, f64::max);
    Ok(EvalRow {
        step,
        m_t: state.current_m,
        tau_tilde,
        bias,
        proxy_bias,
        ret,
        q_error,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_noisy_gridworld, make_ring};
    use rand::SeedableRng;

    fn single_state() -> MdpSpec {
        MdpSpec {
            n_states: 1,
            n_actions: 1,
            transitions: vec![vec![(0, 1.0)]],
            reward_mean: vec![1.0],
            reward_noise: vec![0.0],
            gamma: 0.5,
            terminal: vec![false],
        }
    }

    fn params() -> StepParams {
        StepParams { batch_size: 1, epsilon: 0.0, warmup: false, episode_cap: 1000, shared_batch: false, update_one_random: false }
    }

    #[test]
    fn init_checks_size_range() {
        let mdp = make_ring(3, 2, 0.9).unwrap();
        assert!(init_ensemble(10, 1, &mdp, InitScheme::Zeros, 0.1, 0).is_err());
        assert!(init_ensemble(10, 11, &mdp, InitScheme::Zeros, 0.1, 0).is_err());
        assert!(init_ensemble(1, 1, &mdp, InitScheme::Zeros, 0.1, 0).is_ok());
        let e = init_ensemble(10, 4, &mdp, InitScheme::Uniform(1.0), 0.1, 7).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                assert_ne!(e.tables[i], e.tables[j]);
            }
        }
        assert_eq!(e, init_ensemble(10, 4, &mdp, InitScheme::Uniform(1.0), 0.1, 7).unwrap());
    }

    #[test]
    fn proxies() {
        let mdp = make_ring(2, 1, 0.9).unwrap();
        let mut e = init_ensemble(3, 2, &mdp, InitScheme::Zeros, 0.1, 0).unwrap();
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            e.tables[i].set(0, 0, v);
        }
        assert_eq!(proxy_q(&e, &[0, 1, 2], 0, 0), 1.0);
        assert_eq!(proxy_q(&e, &[2], 0, 0), 3.0);
        assert_eq!(average_proxy_q(&e, 0, 0), 2.0);
    }

    #[test]
    fn geometric_fixed_point() {
        let mdp = single_state();
        let mut e = init_ensemble(3, 2, &mdp, InitScheme::Zeros, 1.0, 0).unwrap();
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut cur = EnvCursor { state: 0, episode_len: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        training_step(&mut e, &mdp, &mut buf, &mut cur, ProxyKind::Min, &params(), &mut rng);
        assert!(e.tables.iter().all(|q| q.get(0, 0) == 1.0));
        for _ in 0..200 {
            training_step(&mut e, &mdp, &mut buf, &mut cur, ProxyKind::Min, &params(), &mut rng);
        }
        for q in &e.tables {
            assert!((q.get(0, 0) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_approximator_is_q_learning() {
        let mdp = single_state();
        let mut e = init_ensemble(1, 1, &mdp, InitScheme::Zeros, 0.5, 0).unwrap();
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut cur = EnvCursor { state: 0, episode_len: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = 0.0;
        for _ in 0..5 {
            training_step(&mut e, &mdp, &mut buf, &mut cur, ProxyKind::Min, &params(), &mut rng);
            q = 0.5 * q + 0.5 * (1.0 + 0.5 * q);
            assert!((e.tables[0].get(0, 0) - q).abs() < 1e-15);
        }
    }

    #[test]
    fn subsets_are_redrawn() {
        let mdp = make_ring(4, 2, 0.9).unwrap();
        let mut e = init_ensemble(10, 3, &mdp, InitScheme::Zeros, 0.1, 0).unwrap();
        let mut buf = ReplayBuffer::new(100).unwrap();
        let mut cur = EnvCursor { state: 0, episode_len: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let subsets: Vec<Vec<usize>> = (0..20)
            .map(|_| training_step(&mut e, &mdp, &mut buf, &mut cur, ProxyKind::Min, &params(), &mut rng).subset)
            .collect();
        assert!(subsets.iter().all(|s| s.len() == 3));
        assert!(subsets.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn fixed_policies_keep_size() {
        let mdp = make_noisy_gridworld(3, 3, 0.5, 0.9, 0).unwrap();
        let cfg = TrainConfig { n_approximators: 5, warmup_steps: 100, ..Default::default() };
        let rec = run_training(&mdp, &SizePolicy::Maxmin, 2000, 500, &cfg, 1).unwrap();
        assert!(rec.rows.iter().all(|r| r.m_t == 5));
        assert_eq!(rec.steps(), vec![500, 1000, 1500, 2000]);
        let rec = run_training(&mdp, &SizePolicy::Fixed(2), 2000, 500, &cfg, 1).unwrap();
        assert!(rec.rows.iter().all(|r| r.m_t == 2));
    }

    #[test]
    fn runs_are_reproducible() {
        let mdp = make_noisy_gridworld(3, 3, 0.5, 0.9, 0).unwrap();
        let cfg = TrainConfig { n_approximators: 4, m0: 2, warmup_steps: 100, ..Default::default() };
        let mut a = AdaptationConfig::new(0.3, 4);
        a.adaptation_every = 200;
        let p = SizePolicy::AdaEq(a);
        let r1 = run_training(&mdp, &p, 1500, 500, &cfg, 3).unwrap();
        let r2 = run_training(&mdp, &p, 1500, 500, &cfg, 3).unwrap();
        assert_eq!(r1.events, r2.events);
        assert!(r1.rows.iter().zip(&r2.rows).all(|(x, y)| x.same_numbers(y)));
    }

    #[test]
    fn epsilon_schedule_shape() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.at(0, 100), 1.0);
        assert!((e.at(25, 100) - 0.525).abs() < 1e-12);
        assert_eq!(e.at(50, 100), 0.05);
        assert_eq!(e.at(99, 100), 0.05);
    }
}
