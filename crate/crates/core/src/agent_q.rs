//! Tabular Q-learning over the threshold grid.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ParamMode, ThresholdConfig, FREQ_STEP, REC_STEP, STATE_COUNT};
use crate::simnet::{compute_reward, reduction_fraction, BestSoFar, EpisodeRecord, Environment, Reward, SimError};

pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent-q: initialization from training needs at least one training set")]
    EmptyTrainingSets,
    #[error("agent-q: invalid config: {0}")]
    InvalidConfig(String),
    #[error("agent-q: q-table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("agent-q: {0}")]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    NoOp,
    IncFreq,
    DecFreq,
    IncRec,
    DecRec,
}

impl ActionKind {
    pub const ALL: [ActionKind; ACTION_COUNT] =
        [ActionKind::NoOp, ActionKind::IncFreq, ActionKind::DecFreq, ActionKind::IncRec, ActionKind::DecRec];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Actions that can change the outcome under `mode`.
    pub fn allowed(mode: ParamMode) -> &'static [ActionKind] {
        use ActionKind::*;
        match mode {
            ParamMode::Both => &Self::ALL,
            ParamMode::FreqOnly => &[NoOp, IncFreq, DecFreq],
            ParamMode::RecentnessOnly => &[NoOp, IncRec, DecRec],
        }
    }

    fn name(self) -> &'static str {
        match self {
            ActionKind::NoOp => "noop",
            ActionKind::IncFreq => "inc_freq",
            ActionKind::DecFreq => "dec_freq",
            ActionKind::IncRec => "inc_rec",
            ActionKind::DecRec => "dec_rec",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown action `{s}`"))
    }
}

/// Moves one threshold a grid step, clamped to the grid.
pub fn apply_action(s: ThresholdConfig, a: ActionKind) -> ThresholdConfig {
    match a {
        ActionKind::NoOp => s,
        ActionKind::IncFreq => s.with_freq(s.freq() + FREQ_STEP),
        ActionKind::DecFreq => s.with_freq(s.freq().saturating_sub(FREQ_STEP)),
        ActionKind::IncRec => s.with_rec(s.rec() + REC_STEP),
        ActionKind::DecRec => s.with_rec(s.rec().saturating_sub(REC_STEP)),
    }
}

/// `eps * (1 - step / budget)`.
pub fn decay_epsilon(eps: f64, step: usize, budget: usize) -> f64 {
    debug_assert!(step < budget);
    eps - (step as f64 / budget as f64) * eps
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax_among(values: &[f64; ACTION_COUNT], actions: &[ActionKind]) -> ActionKind {
    let mut best = actions[0];
    for &a in &actions[1..] {
        if values[a.index()] > values[best.index()] {
            best = a;
        }
    }
    best
}

/// ε-greedy over a restricted action set, shared by both agents.
pub(crate) fn select_among<R: Rng + ?Sized>(
    values: &[f64; ACTION_COUNT],
    actions: &[ActionKind],
    eps: f64,
    rng: &mut R,
) -> ActionKind {
    if rng.random::<f64>() < eps {
        actions[rng.random_range(0..actions.len())]
    } else {
        argmax_among(values, actions)
    }
}

/// Q-values for every (state, action) cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    q: Vec<[f64; ACTION_COUNT]>,
}

impl Default for QTable {
    fn default() -> Self {
        QTable::zeros()
    }
}

impl QTable {
    pub fn zeros() -> Self {
        QTable { q: vec![[0.0; ACTION_COUNT]; STATE_COUNT] }
    }

    /// Every cell uniform in [0, 0.01).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut t = QTable::zeros();
        for row in &mut t.q {
            for v in row.iter_mut() {
                *v = rng.random_range(0.0..0.01);
            }
        }
        t
    }

    pub fn get(&self, s: ThresholdConfig, a: ActionKind) -> f64 {
        self.q[s.index()][a.index()]
    }

    pub fn set(&mut self, s: ThresholdConfig, a: ActionKind, v: f64) {
        self.q[s.index()][a.index()] = v;
    }

    pub fn row(&self, s: ThresholdConfig) -> &[f64; ACTION_COUNT] {
        &self.q[s.index()]
    }

    pub fn max_q(&self, s: ThresholdConfig) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.q.iter().flatten().copied()
    }

    /// One line per cell, `freq_thr,rec_thr,action,q_value`, in grid order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("freq_thr,rec_thr,action,q_value\n");
        for s in ThresholdConfig::all() {
            for a in ActionKind::ALL {
                out.push_str(&format!("{},{},{},{:.16e}\n", s.freq(), s.rec(), a, self.get(s, a)));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AgentError> {
        let mut t = QTable::zeros();
        let mut seen = vec![[false; ACTION_COUNT]; STATE_COUNT];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with("freq_thr") {
                continue;
            }
            let err = |msg: String| AgentError::Parse { line, msg };
            let cols: Vec<&str> = raw.split(',').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", cols.len())));
            }
            let f: u32 = cols[0].parse().map_err(|_| err(format!("bad freq_thr `{}`", cols[0])))?;
            let r: u32 = cols[1].parse().map_err(|_| err(format!("bad rec_thr `{}`", cols[1])))?;
            let s = ThresholdConfig::new(f, r).map_err(|e| err(e.to_string()))?;
            let a: ActionKind = cols[2].parse().map_err(err)?;
            let v: f64 = cols[3].parse().map_err(|_| err(format!("bad q_value `{}`", cols[3])))?;
            if !v.is_finite() {
                return Err(err("q_value must be finite".into()));
            }
            t.set(s, a, v);
            seen[s.index()][a.index()] = true;
        }
        if seen.iter().flatten().any(|x| !x) {
            return Err(AgentError::Parse { line: 0, msg: "table does not cover every cell".into() });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    /// Keep ε at `epsilon0` instead of decaying it.
    pub static_epsilon: bool,
    pub budget: usize,
    pub goal_mu: f64,
    pub episode_cap: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.1,
            gamma: 0.95,
            epsilon0: 1.0,
            static_epsilon: false,
            budget: 100,
            goal_mu: 0.4,
            episode_cap: 1000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return bad("epsilon0 must be in [0, 1]");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if self.episode_cap == 0 {
            return bad("episode_cap must be at least 1");
        }
        Ok(())
    }

    /// Static ε = 0.1, used when the table was initialized by training.
    pub fn exploiting(self) -> Self {
        AgentConfig { epsilon0: 0.1, static_epsilon: true, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub episodes_run: usize,
    pub initial_overhead: u64,
    pub initial_state: ThresholdConfig,
    pub best: BestSoFar,
    pub goal_met: bool,
    pub trace: Vec<EpisodeRecord>,
}

impl TrainResult {
    pub fn improvement(&self) -> f64 {
        reduction_fraction(self.initial_overhead, self.best.best_overhead).unwrap_or(0.0)
    }

    /// Episode on which the goal was met.
    pub fn episodes_to_goal(&self) -> Option<usize> {
        self.goal_met.then_some(self.episodes_run)
    }
}

pub fn epsilon_greedy_select<R: Rng + ?Sized>(q: &QTable, s: ThresholdConfig, eps: f64, rng: &mut R) -> ActionKind {
    select_among(q.row(s), &ActionKind::ALL, eps, rng)
}

/// `Q(s,a) += alpha * (r + gamma * max Q(s_next, .) - Q(s,a))`.
pub fn q_update(q: &mut QTable, s: ThresholdConfig, a: ActionKind, r: Reward, s_next: ThresholdConfig, cfg: &AgentConfig) {
    let target = r.as_f64() + cfg.gamma * q.max_q(s_next);
    let cur = q.get(s, a);
    q.set(s, a, cur + cfg.alpha * (target - cur));
}

/// Shared bookkeeping for one goal-driven run.
pub(crate) struct RunState {
    pub initial_overhead: u64,
    pub initial_state: ThresholdConfig,
    pub best: BestSoFar,
    pub eps: f64,
    pub trace: Vec<EpisodeRecord>,
}

impl RunState {
    pub fn start<E: Environment + ?Sized>(env: &mut E, s0: ThresholdConfig, eps: f64) -> Result<Self, SimError> {
        let m = env.evaluate(s0)?;
        if m.overhead == 0 {
            return Err(SimError::ZeroInitial);
        }
        Ok(RunState { initial_overhead: m.overhead, initial_state: s0, best: BestSoFar::new(m.overhead, s0), eps, trace: Vec::new() })
    }

    /// Runs one episode at `s_next` and records it; returns the reward and
    /// whether the goal is now met.
    pub fn step<E: Environment + ?Sized>(&mut self, env: &mut E, s_next: ThresholdConfig, goal_mu: f64) -> Result<(Reward, bool), SimError> {
        let m = env.evaluate(s_next)?;
        let r = compute_reward(&mut self.best, m.overhead, s_next);
        self.trace.push(EpisodeRecord {
            episode: self.trace.len() + 1,
            overhead: m.overhead,
            hits: m.hits,
            misses: m.misses,
            hit_ratio: m.hit_ratio().unwrap_or(0.0),
            reduction: reduction_fraction(self.initial_overhead, m.overhead)?,
            thresholds: s_next,
            reward: r,
            epsilon: self.eps,
        });
        let improvement = reduction_fraction(self.initial_overhead, self.best.best_overhead)?;
        Ok((r, improvement > goal_mu))
    }

    pub fn finish(self, goal_met: bool) -> TrainResult {
        TrainResult {
            episodes_run: self.trace.len(),
            initial_overhead: self.initial_overhead,
            initial_state: self.initial_state,
            best: self.best,
            goal_met,
            trace: self.trace,
        }
    }
}

/// Runs the goal-driven Q-learning loop from `initial_state` until the
/// reduction against the initial overhead exceeds `goal_mu` or the episode
/// cap is reached. Hitting the cap is reported through `goal_met = false`.
pub fn q_train<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    q: &mut QTable,
    cfg: &AgentConfig,
    initial_state: ThresholdConfig,
    rng: &mut R,
) -> Result<TrainResult, AgentError> {
    cfg.validate()?;
    let actions = ActionKind::allowed(env.param_mode());
    let mut run = RunState::start(env, initial_state, cfg.epsilon0)?;
    let mut s = initial_state;
    for ep in 0..cfg.episode_cap {
        let a = select_among(q.row(s), actions, run.eps, rng);
        if !cfg.static_epsilon {
            run.eps = decay_epsilon(run.eps, ep % cfg.budget, cfg.budget);
        }
        let s_next = apply_action(s, a);
        let (r, done) = run.step(env, s_next, cfg.goal_mu)?;
        q_update(q, s, a, r, s_next, cfg);
        s = s_next;
        if done {
            return Ok(run.finish(true));
        }
    }
    Ok(run.finish(false))
}

/// `n` distinct grid states drawn uniformly.
pub fn random_training_sets<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<ThresholdConfig> {
    sample(rng, STATE_COUNT, n.min(STATE_COUNT))
        .into_iter()
        .map(|i| ThresholdConfig::from_index(i).expect("index below STATE_COUNT"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum QInit {
    Random,
    /// One training run per set, each starting from that set.
    FromTraining { sets: Vec<ThresholdConfig>, cfg: AgentConfig },
}

/// Builds a Q-table: small random values, optionally refined by training
/// runs started from each training set in turn.
pub fn init_qtable<E: Environment + ?Sized>(env: &mut E, mode: &QInit, seed: u64) -> Result<QTable, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::random(&mut rng);
    if let QInit::FromTraining { sets, cfg } = mode {
        if sets.is_empty() {
            return Err(AgentError::EmptyTrainingSets);
        }
        for &s in sets {
            q_train(env, &mut q, cfg, s, &mut rng)?;
        }
    }
    Ok(q)
}
