//! Deep Q-network agent: a small ReLU MLP written from scratch, uniform
//! experience replay and plain SGD on the squared TD error.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent_q::{apply_action, decay_epsilon, select_among, ActionKind, RunState, TrainResult, ACTION_COUNT};
use crate::model::{ThresholdConfig, FREQ_MAX, REC_MAX};
use crate::simnet::{Environment, Reward, SimError};

pub const INPUT_SIZE: usize = 4;
pub const DEFAULT_LAYERS: [usize; 5] = [INPUT_SIZE, 24, 24, 24, ACTION_COUNT];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqnError {
    #[error("agent-dqn: network input is not finite")]
    NonFiniteInput,
    #[error("agent-dqn: replay holds {have} experiences, {need} requested")]
    InsufficientExperiences { have: usize, need: usize },
    #[error("agent-dqn: initialization from training needs at least one training set")]
    EmptyTrainingSets,
    #[error("agent-dqn: invalid config: {0}")]
    InvalidConfig(String),
    #[error("agent-dqn: network line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("agent-dqn: {0}")]
    Sim(#[from] SimError),
}

pub fn relu(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

/// `[freq/200, rec/300, action/4, reward]`.
pub fn encode_state(s: ThresholdConfig, last_action: ActionKind, last_reward: Reward) -> [f64; INPUT_SIZE] {
    [
        f64::from(s.freq()) / f64::from(FREQ_MAX),
        f64::from(s.rec()) / f64::from(REC_MAX),
        last_action.index() as f64 / (ACTION_COUNT - 1) as f64,
        last_reward.as_f64(),
    ]
}

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat vector: for each layer, the weight matrix
/// (row-major, one row per output unit) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&n| n > 0), "degenerate layer sizes");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(sizes);
        for l in 0..net.layer_count() {
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-scale..=scale);
            }
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of layer `l`'s weights and biases within `params`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let off: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w_end = off + n_in * n_out;
        (off..w_end, w_end..w_end + n_out)
    }

    /// Activations of every layer, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        for l in 0..self.layer_count() {
            let (wr, br) = self.layer_range(l);
            let (w, b) = (&self.params[wr], &self.params[br]);
            let prev = &acts[l];
            let n_in = prev.len();
            let last = l + 1 == self.layer_count();
            let out = b
                .iter()
                .enumerate()
                .map(|(j, bj)| {
                    let z = bj + w[j * n_in..(j + 1) * n_in].iter().zip(prev).map(|(wi, ai)| wi * ai).sum::<f64>();
                    if last {
                        z
                    } else {
                        relu(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, DqnError> {
        if input.len() != self.sizes[0] || input.iter().any(|x| !x.is_finite()) {
            return Err(DqnError::NonFiniteInput);
        }
        Ok(self.activations(input).pop().expect("at least one layer"))
    }

    /// `(target - Q_action(input))^2`.
    pub fn loss(&self, input: &[f64], action: ActionKind, target: f64) -> f64 {
        let q = self.activations(input).pop().expect("at least one layer")[action.index()];
        (target - q).powi(2)
    }

    /// Gradient of [`Mlp::loss`] with respect to every parameter.
    pub fn gradient(&self, input: &[f64], action: ActionKind, target: f64) -> Vec<f64> {
        let acts = self.activations(input);
        let mut grad = vec![0.0; self.params.len()];
        let out = acts.last().expect("at least one layer");
        let mut delta = vec![0.0; out.len()];
        delta[action.index()] = -2.0 * (target - out[action.index()]);
        for l in (0..self.layer_count()).rev() {
            let (wr, br) = self.layer_range(l);
            let prev = &acts[l];
            let n_in = prev.len();
            for (j, &dj) in delta.iter().enumerate() {
                grad[br.start + j] = dj;
                for (i, &ai) in prev.iter().enumerate() {
                    grad[wr.start + j * n_in + i] = dj * ai;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[wr];
            delta = (0..n_in)
                .map(|i| {
                    if prev[i] > 0.0 {
                        delta.iter().enumerate().map(|(j, dj)| dj * w[j * n_in + i]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        grad
    }

    /// One SGD step on the squared error of a single output head.
    pub fn sgd_step(&mut self, input: &[f64], action: ActionKind, target: f64, lr: f64) {
        let g = self.gradient(input, action, target);
        for (p, gi) in self.params.iter_mut().zip(g) {
            *p -= lr * gi;
        }
    }

    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        let mut out = format!("layers,{}\n", sizes.join(","));
        for p in &self.params {
            out.push_str(&format!("{p:.16e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DqnError> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or(DqnError::Parse { line: 1, msg: "empty file".into() })?;
        let sizes: Vec<usize> = head
            .strip_prefix("layers,")
            .ok_or(DqnError::Parse { line: 1, msg: "missing `layers,` header".into() })?
            .split(',')
            .map(|x| x.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| DqnError::Parse { line: 1, msg: "bad layer size".into() })?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(DqnError::Parse { line: 1, msg: "degenerate layer sizes".into() });
        }
        let mut net = Mlp::zeros(&sizes);
        let mut n = 0;
        for (i, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let v: f64 = raw.trim().parse().map_err(|_| DqnError::Parse { line: i + 1, msg: format!("bad value `{raw}`") })?;
            if !v.is_finite() || n >= net.params.len() {
                return Err(DqnError::Parse { line: i + 1, msg: "non-finite or surplus parameter".into() });
            }
            net.params[n] = v;
            n += 1;
        }
        if n != net.params.len() {
            return Err(DqnError::Parse { line: 0, msg: format!("expected {} parameters, found {n}", net.params.len()) });
        }
        Ok(net)
    }
}

pub fn mlp_forward(net: &Mlp, input: &[f64]) -> Result<Vec<f64>, DqnError> {
    net.forward(input)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub s: [f64; INPUT_SIZE],
    pub a: ActionKind,
    pub r: Reward,
    pub s_next: [f64; INPUT_SIZE],
}

/// `r + gamma * max_a Q(s_next, a)` under the given (previous) parameters.
pub fn dqn_target(e: &Experience, net_prev: &Mlp, gamma: f64) -> f64 {
    let next = net_prev.activations(&e.s_next).pop().expect("at least one layer");
    e.r.as_f64() + gamma * next.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Bounded FIFO of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    buf: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { buf: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.buf.iter()
    }

    pub fn store(&mut self, e: Experience) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(e);
    }

    /// `n` distinct experiences, uniformly chosen.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Experience>, DqnError> {
        if n > self.buf.len() {
            return Err(DqnError::InsufficientExperiences { have: self.buf.len(), need: n });
        }
        Ok(sample(rng, self.buf.len(), n).into_iter().map(|i| self.buf[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon0: f64,
    pub static_epsilon: bool,
    pub budget: usize,
    pub goal_mu: f64,
    pub episode_cap: usize,
    pub init_scale: f64,
    pub replay_capacity: usize,
    pub replay_start: usize,
    pub minibatch: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.95,
            learning_rate: 0.01,
            epsilon0: 1.0,
            static_epsilon: false,
            budget: 100,
            goal_mu: 0.4,
            episode_cap: 1000,
            init_scale: 0.1,
            replay_capacity: 1000,
            replay_start: 32,
            minibatch: 4,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.epsilon0) {
            return bad("gamma and epsilon0 must be in [0, 1]");
        }
        if self.budget == 0 || self.episode_cap == 0 || self.replay_capacity == 0 || self.minibatch == 0 {
            return bad("budget, episode_cap, replay_capacity and minibatch must be positive");
        }
        if self.minibatch > self.replay_start.max(1) || self.replay_start > self.replay_capacity {
            return bad("need minibatch <= replay_start <= replay_capacity");
        }
        Ok(())
    }

    pub fn exploiting(self) -> Self {
        DqnConfig { epsilon0: 0.1, static_epsilon: true, ..self }
    }
}

/// Network plus the replay memory it learns from.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    pub net: Mlp,
    pub memory: ReplayMemory,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &DqnConfig, rng: &mut R) -> Self {
        DqnAgent { net: Mlp::random(&DEFAULT_LAYERS, cfg.init_scale, rng), memory: ReplayMemory::new(cfg.replay_capacity) }
    }

    pub fn with_net(net: Mlp, cfg: &DqnConfig) -> Self {
        DqnAgent { net, memory: ReplayMemory::new(cfg.replay_capacity) }
    }
}

/// Goal-driven DQN loop. Every episode stores one transition; once the
/// memory holds `replay_start` transitions, a minibatch is replayed against
/// targets computed from the parameters as they were before the update.
pub fn dqn_train<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &mut E,
    agent: &mut DqnAgent,
    cfg: &DqnConfig,
    initial_state: ThresholdConfig,
    rng: &mut R,
) -> Result<TrainResult, DqnError> {
    cfg.validate()?;
    let actions = ActionKind::allowed(env.param_mode());
    let mut run = RunState::start(env, initial_state, cfg.epsilon0)?;
    let (mut s, mut last_a, mut last_r) = (initial_state, ActionKind::NoOp, Reward::Zero);
    for ep in 0..cfg.episode_cap {
        let x = encode_state(s, last_a, last_r);
        let out = agent.net.forward(&x)?;
        let values: [f64; ACTION_COUNT] = out.try_into().expect("output layer has one head per action");
        let a = select_among(&values, actions, run.eps, rng);
        if !cfg.static_epsilon {
            run.eps = decay_epsilon(run.eps, ep % cfg.budget, cfg.budget);
        }
        let s_next = apply_action(s, a);
        let (r, done) = run.step(env, s_next, cfg.goal_mu)?;
        agent.memory.store(Experience { s: x, a, r, s_next: encode_state(s_next, a, r) });
        if agent.memory.len() >= cfg.replay_start {
            let prev = agent.net.clone();
            for e in agent.memory.sample(cfg.minibatch, rng)? {
                let t = dqn_target(&e, &prev, cfg.gamma);
                agent.net.sgd_step(&e.s, e.a, t, cfg.learning_rate);
            }
        }
        (s, last_a, last_r) = (s_next, a, r);
        if done {
            return Ok(run.finish(true));
        }
    }
    Ok(run.finish(false))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DqnInit {
    Random,
    FromTraining { sets: Vec<ThresholdConfig>, cfg: DqnConfig },
}

/// Fresh agent, optionally pre-trained by one run per training set. The
/// replay memory carries over between runs.
pub fn init_dqn<E: Environment + ?Sized>(env: &mut E, mode: &DqnInit, cfg: &DqnConfig, seed: u64) -> Result<DqnAgent, DqnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = DqnAgent::new(cfg, &mut rng);
    if let DqnInit::FromTraining { sets, cfg: train_cfg } = mode {
        if sets.is_empty() {
            return Err(DqnError::EmptyTrainingSets);
        }
        for &s in sets {
            dqn_train(env, &mut agent, train_cfg, s, &mut rng)?;
        }
    }
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(f: u32, r: u32) -> ThresholdConfig {
        ThresholdConfig::new(f, r).unwrap()
    }

    #[test]
    fn relu_branches() {
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu(0.0), 0.0);
        assert_eq!(relu(2.5), 2.5);
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_state(st(90, 30), ActionKind::NoOp, Reward::Zero), [0.45, 0.1, 0.0, 0.0]);
        assert_eq!(encode_state(st(0, 0), ActionKind::NoOp, Reward::Zero), [0.0; 4]);
        assert_eq!(encode_state(st(200, 300), ActionKind::DecRec, Reward::Positive), [1.0; 4]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&DEFAULT_LAYERS);
        assert_eq!(net.forward(&[0.3, -2.0, 1.0, 5.0]).unwrap(), vec![0.0; 5]);
        assert_eq!(net.params().len(), 4 * 24 + 24 + 2 * (24 * 24 + 24) + 24 * 5 + 5);
    }

    #[test]
    fn hand_evaluated_hidden_unit() {
        // One hidden unit w=[1,-1,0,0], b=0; output copies it.
        let mut net = Mlp::zeros(&[4, 1, 1]);
        let (w0, _) = net.layer_range(0);
        net.params_mut()[w0.start] = 1.0;
        net.params_mut()[w0.start + 1] = -1.0;
        let (w1, _) = net.layer_range(1);
        net.params_mut()[w1.start] = 1.0;
        assert_eq!(net.forward(&[2.0, 5.0, 0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[5.0, 2.0, 0.0, 0.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = Mlp::zeros(&DEFAULT_LAYERS);
        assert_eq!(net.forward(&[f64::NAN, 0.0, 0.0, 0.0]), Err(DqnError::NonFiniteInput));
        assert_eq!(net.forward(&[0.0; 3]), Err(DqnError::NonFiniteInput));
    }

    #[test]
    fn target_examples() {
        let mut net = Mlp::zeros(&[4, 1, 5]);
        let e = Experience { s: [0.0; 4], a: ActionKind::NoOp, r: Reward::Positive, s_next: [0.0; 4] };
        // Output bias 2.0 on one head makes max next-Q = 2.
        let (_, b1) = net.layer_range(1);
        net.params_mut()[b1.start + 3] = 2.0;
        assert!((dqn_target(&e, &net, 0.95) - 2.9).abs() < 1e-12);
        let zero = Mlp::zeros(&DEFAULT_LAYERS);
        assert_eq!(dqn_target(&Experience { r: Reward::Zero, ..e }, &zero, 0.95), 0.0);
        assert_eq!(dqn_target(&Experience { r: Reward::Negative, ..e }, &zero, 0.95), -1.0);
    }

    #[test]
    fn step_at_target_is_noop() {
        let net = Mlp::random(&DEFAULT_LAYERS, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        let x = [0.4, 0.2, 0.5, 1.0];
        let q = net.forward(&x).unwrap()[2];
        let mut stepped = net.clone();
        stepped.sgd_step(&x, ActionKind::DecFreq, q, 0.01);
        assert_eq!(stepped, net);
    }

    #[test]
    fn single_sample_regression_converges() {
        let mut net = Mlp::random(&DEFAULT_LAYERS, 0.1, &mut ChaCha8Rng::seed_from_u64(6));
        let x = [0.45, 0.1, 0.25, 1.0];
        for _ in 0..10_000 {
            net.sgd_step(&x, ActionKind::IncRec, 1.5, 0.01);
        }
        assert!((net.forward(&x).unwrap()[3] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn replay_fifo_bound() {
        let mut mem = ReplayMemory::new(1000);
        for i in 0..1001 {
            let v = i as f64;
            mem.store(Experience { s: [v, 0.0, 0.0, 0.0], a: ActionKind::NoOp, r: Reward::Zero, s_next: [0.0; 4] });
        }
        assert_eq!(mem.len(), 1000);
        assert!(mem.iter().all(|e| e.s[0] != 0.0));
    }

    #[test]
    fn exhaustive_sample_and_shortfall() {
        let mut mem = ReplayMemory::new(10);
        for i in 0..4 {
            mem.store(Experience { s: [i as f64, 0.0, 0.0, 0.0], a: ActionKind::NoOp, r: Reward::Zero, s_next: [0.0; 4] });
        }
        let mut got: Vec<f64> = mem.sample(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().iter().map(|e| e.s[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(mem.sample(5, &mut ChaCha8Rng::seed_from_u64(1)), Err(DqnError::InsufficientExperiences { have: 4, need: 5 }));
    }

    #[test]
    fn net_text_round_trip() {
        let net = Mlp::random(&DEFAULT_LAYERS, 0.1, &mut ChaCha8Rng::seed_from_u64(8));
        let back = Mlp::from_text(&net.to_text()).unwrap();
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(Mlp::from_text("layers,4,5\n1.0\n").is_err());
    }
}
