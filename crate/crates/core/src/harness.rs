//! Experiment configuration, end-to-end runs and report files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent_dqn::{dqn_train, init_dqn, DqnAgent, DqnConfig, DqnError, DqnInit, Mlp};
use crate::agent_q::{init_qtable, q_train, random_training_sets, AgentConfig, AgentError, QInit, QTable, TrainResult};
use crate::baselines::{knapsack_exact, run_mbf_plan, BaselineError, IlpInstance, MbfConfig};
use crate::model::{FlowId, FlowTable, ModelError, ParamMode, ThresholdConfig, RULE_SIZE_BITS};
use crate::simnet::{reduction_fraction, write_episode_csv, EpisodeRecord, Environment, PlacementEnv, Reward, SimError};
use crate::traffic::{generate_schedule, TickPlan, TrafficError, TrafficProfile};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("harness: config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("harness: invalid value for `{field}`: {msg}")]
    Validation { field: &'static str, msg: String },
    #[error("harness: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("traffic: {0}")]
    Traffic(#[from] TrafficError),
    #[error("simnet: {0}")]
    Sim(#[from] SimError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ql,
    Dqn,
    Mbf,
    Oracle,
    Significance,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ql => "ql",
            Mode::Dqn => "dqn",
            Mode::Mbf => "mbf",
            Mode::Oracle => "oracle",
            Mode::Significance => "significance",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ql" => Ok(Mode::Ql),
            "dqn" => Ok(Mode::Dqn),
            "mbf" => Ok(Mode::Mbf),
            "oracle" => Ok(Mode::Oracle),
            "significance" => Ok(Mode::Significance),
            other => Err(format!("unknown mode `{other}` (expected ql, dqn, mbf, oracle or significance)")),
        }
    }
}

/// Which learner the significance study trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Ql,
    Dqn,
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::Ql => "ql",
            Learner::Dqn => "dqn",
        })
    }
}

impl FromStr for Learner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ql" => Ok(Learner::Ql),
            "dqn" => Ok(Learner::Dqn),
            other => Err(format!("unknown learner `{other}` (expected ql or dqn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableInit {
    Random,
    FromTraining(usize),
}

impl fmt::Display for TableInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableInit::Random => f.write_str("random"),
            TableInit::FromTraining(n) => write!(f, "from_training({n})"),
        }
    }
}

impl FromStr for TableInit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "random" {
            return Ok(TableInit::Random);
        }
        let n = s
            .strip_prefix("from_training(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("expected `random` or `from_training(N)`, got `{s}`"))?;
        let n: usize = n.trim().parse().map_err(|_| format!("bad training-set count `{n}`"))?;
        if n == 0 {
            return Err("from_training needs at least one set".into());
        }
        Ok(TableInit::FromTraining(n))
    }
}

/// Packet size of the desk-scale reference workload, bytes.
pub const REFERENCE_PACKET: u64 = 1500;

/// Desk-scale reference traffic: one packet per flow per second, single-packet
/// mice, 40-packet elephants and on average three new flows per second.
pub fn reference_profile() -> TrafficProfile {
    let mut p = TrafficProfile {
        elephant_fraction: 0.1,
        mice_size: REFERENCE_PACKET,
        elephant_size: 40 * REFERENCE_PACKET,
        aggregate_rate: 0.0,
        packet_size: REFERENCE_PACKET,
        per_flow_rate: (REFERENCE_PACKET * 8) as f64,
    };
    p.aggregate_rate = 3.0 * p.mean_flow_bits();
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// seeds every agent-side random draw
    pub seed: u64,
    /// seeds the generated traffic
    pub traffic_seed: u64,
    pub episodes_cap: usize,
    pub goal_mu: f64,
    pub table_capacity_bits: u64,
    pub traffic: TrafficProfile,
    pub n_hosts: u16,
    /// seconds of generated traffic
    pub horizon: u64,
    pub orchestration_window: u64,
    pub qtable_init: TableInit,
    /// episode cap of each pre-training run
    pub pretrain_cap: usize,
    pub param_mode: ParamMode,
    pub start_freq: u32,
    pub start_rec: u32,
    /// learner used by the significance study
    pub agent: Learner,
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Ql,
            seed: 1,
            traffic_seed: 3,
            episodes_cap: 400,
            goal_mu: 0.4,
            table_capacity_bits: 64 * RULE_SIZE_BITS,
            traffic: reference_profile(),
            n_hosts: 20,
            horizon: 90,
            orchestration_window: 90,
            qtable_init: TableInit::Random,
            pretrain_cap: 30,
            param_mode: ParamMode::Both,
            start_freq: 200,
            start_rec: 0,
            agent: Learner::Dqn,
            output_path: None,
        }
    }
}

/// Every accepted key with its default, as shown by `--help`.
pub const CONFIG_KEYS: &str = "\
mode=ql                      ql | dqn | mbf | oracle | significance
seed=1                       agent seed
traffic_seed=3               traffic generator seed
episodes_cap=400             episode limit of the measured run
goal_mu=0.4                  target overhead reduction, in (0, 1)
table_capacity_bits=22784    TCAM budget (64 entries of 356 bits)
elephant_fraction=0.1
mice_size=1500               bytes
elephant_size=60000          bytes
aggregate_rate=176400        offered load, bit/s
packet_size=1500             bytes
per_flow_rate=12000          bit/s per flow
n_hosts=20
horizon=90                   seconds of generated traffic
orchestration_window=90      seconds observed to build the flow pool
qtable_init=random           random | from_training(N)
pretrain_cap=30              episode cap of each pre-training run
param_mode=both              both | freq_only | recentness_only
start_freq=200               initial frequency threshold
start_rec=0                  initial recentness threshold
agent=dqn                    learner used by mode=significance: ql | dqn
output_path=                 report CSV path (empty: no report)";

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field, msg: &str| Err(HarnessError::Validation { field, msg: msg.to_string() });
        if !(self.goal_mu > 0.0 && self.goal_mu < 1.0) {
            return bad("goal_mu", "must lie in (0, 1)");
        }
        if self.episodes_cap == 0 {
            return bad("episodes_cap", "must be at least 1");
        }
        if self.pretrain_cap == 0 {
            return bad("pretrain_cap", "must be at least 1");
        }
        if self.orchestration_window == 0 {
            return bad("orchestration_window", "must be positive");
        }
        if self.orchestration_window > self.horizon {
            return bad("orchestration_window", "must not exceed horizon");
        }
        if self.n_hosts < 2 {
            return bad("n_hosts", "at least two hosts are needed");
        }
        if ThresholdConfig::new(self.start_freq, self.start_rec).is_err() {
            return bad("start_freq", "start thresholds must lie on the grid (freq 0..=200, rec 0..=300, step 10)");
        }
        if let Err(e) = self.traffic.validate() {
            return Err(HarnessError::Validation { field: "traffic", msg: e.to_string() });
        }
        Ok(())
    }

    pub fn start_state(&self) -> ThresholdConfig {
        ThresholdConfig::new(self.start_freq, self.start_rec).expect("validated start state")
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| HarnessError::Parse { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` pair. Values are checked for syntax only.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for {key}"))
        }
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "traffic_seed" => self.traffic_seed = num(key, v)?,
            "episodes_cap" => self.episodes_cap = num(key, v)?,
            "goal_mu" => self.goal_mu = num(key, v)?,
            "table_capacity_bits" => self.table_capacity_bits = num(key, v)?,
            "elephant_fraction" => self.traffic.elephant_fraction = num(key, v)?,
            "mice_size" => self.traffic.mice_size = num(key, v)?,
            "elephant_size" => self.traffic.elephant_size = num(key, v)?,
            "aggregate_rate" => self.traffic.aggregate_rate = num(key, v)?,
            "packet_size" => self.traffic.packet_size = num(key, v)?,
            "per_flow_rate" => self.traffic.per_flow_rate = num(key, v)?,
            "n_hosts" => self.n_hosts = num(key, v)?,
            "horizon" => self.horizon = num(key, v)?,
            "orchestration_window" => self.orchestration_window = num(key, v)?,
            "qtable_init" => self.qtable_init = v.parse()?,
            "pretrain_cap" => self.pretrain_cap = num(key, v)?,
            "param_mode" => self.param_mode = v.parse()?,
            "start_freq" => self.start_freq = num(key, v)?,
            "start_rec" => self.start_rec = num(key, v)?,
            "agent" => self.agent = v.parse()?,
            "output_path" => self.output_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Every key in a fixed order; [`ExperimentConfig::parse`] reads it back
    /// to an identical config.
    pub fn echo(&self) -> String {
        let t = &self.traffic;
        let out = self.output_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        format!(
            "mode={}\nseed={}\ntraffic_seed={}\nepisodes_cap={}\ngoal_mu={}\ntable_capacity_bits={}\n\
             elephant_fraction={}\nmice_size={}\nelephant_size={}\naggregate_rate={}\npacket_size={}\nper_flow_rate={}\n\
             n_hosts={}\nhorizon={}\norchestration_window={}\nqtable_init={}\npretrain_cap={}\nparam_mode={}\n\
             start_freq={}\nstart_rec={}\nagent={}\noutput_path={}\n",
            self.mode,
            self.seed,
            self.traffic_seed,
            self.episodes_cap,
            self.goal_mu,
            self.table_capacity_bits,
            t.elephant_fraction,
            t.mice_size,
            t.elephant_size,
            t.aggregate_rate,
            t.packet_size,
            t.per_flow_rate,
            self.n_hosts,
            self.horizon,
            self.orchestration_window,
            self.qtable_init,
            self.pretrain_cap,
            self.param_mode,
            self.start_freq,
            self.start_rec,
            self.agent,
            out
        )
    }

    /// Orchestrated environment for this config's workload and table.
    pub fn environment(&self) -> Result<PlacementEnv, HarnessError> {
        let schedule = generate_schedule(&self.traffic, self.horizon, self.n_hosts, self.traffic_seed)?;
        Ok(PlacementEnv::new(schedule, self.orchestration_window, self.table_capacity_bits)?.with_param_mode(self.param_mode))
    }

    fn agent_config(&self) -> AgentConfig {
        AgentConfig { goal_mu: self.goal_mu, episode_cap: self.episodes_cap, ..AgentConfig::default() }
    }

    fn dqn_config(&self) -> DqnConfig {
        DqnConfig { goal_mu: self.goal_mu, episode_cap: self.episodes_cap, ..DqnConfig::default() }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ExperimentConfig::parse(&text)
}

/// A learned policy, as saved with `--save-policy`.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Table(QTable),
    Net(Mlp),
}

impl Policy {
    pub fn to_text(&self) -> String {
        match self {
            Policy::Table(q) => q.to_text(),
            Policy::Net(n) => n.to_text(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub episodes_run: usize,
    pub initial_overhead: u64,
    pub best_overhead: u64,
    pub best_thresholds: Option<ThresholdConfig>,
    pub reduction: f64,
    pub hit_ratio: f64,
    pub episodes_to_goal: Option<usize>,
    pub goal_met: bool,
}

impl Summary {
    fn lines(&self, prefix: &str) -> String {
        let thr = |f: fn(&ThresholdConfig) -> u32| self.best_thresholds.as_ref().map(|t| f(t).to_string()).unwrap_or_default();
        let goal = self.episodes_to_goal.map(|e| e.to_string()).unwrap_or_else(|| "none".into());
        format!(
            "{prefix}label={}\n{prefix}episodes_run={}\n{prefix}initial_overhead={}\n{prefix}best_overhead={}\n\
             {prefix}best_freq_thr={}\n{prefix}best_rec_thr={}\n{prefix}reduction={:.6}\n{prefix}hit_ratio={:.6}\n\
             {prefix}episodes_to_goal={goal}\n{prefix}goal_met={}\n",
            self.label,
            self.episodes_run,
            self.initial_overhead,
            self.best_overhead,
            thr(ThresholdConfig::freq),
            thr(ThresholdConfig::rec),
            self.reduction,
            self.hit_ratio,
            self.goal_met
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub rows: Vec<EpisodeRecord>,
    pub summary: Summary,
    /// Per-parameter-mode results of a significance study.
    pub sections: Vec<Summary>,
    /// Objective of the exact partition, in oracle mode.
    pub oracle_objective: Option<u64>,
    pub policy: Option<Policy>,
}

impl RunReport {
    pub fn summary_text(&self) -> String {
        let mut out = String::from("[config]\n");
        out.push_str(&self.config.echo());
        out.push_str("[summary]\n");
        out.push_str(&self.summary.lines(""));
        if let Some(obj) = self.oracle_objective {
            out.push_str(&format!("oracle_objective={obj}\n"));
        }
        for s in &self.sections {
            out.push_str(&format!("[{}]\n", s.label));
            out.push_str(&s.lines(&format!("{}.", s.label)));
        }
        out
    }
}

/// Writes the per-episode CSV to `path` and the summary next to it with a
/// `.summary` suffix.
pub fn write_report(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    let mut csv = Vec::new();
    write_episode_csv(&mut csv, &report.rows).map_err(io_err(path))?;
    fs::write(path, csv).map_err(io_err(path))?;
    let mut summary_path = path.as_os_str().to_owned();
    summary_path.push(".summary");
    let summary_path = PathBuf::from(summary_path);
    let mut f = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    f.write_all(report.summary_text().as_bytes()).map_err(io_err(&summary_path))?;
    Ok(())
}

/// Hit ratio of the placement chosen by `t` on this environment.
fn hit_ratio_at(env: &mut PlacementEnv, t: ThresholdConfig) -> Result<f64, HarnessError> {
    let m = env.evaluate(t)?;
    Ok(m.hit_ratio().unwrap_or(0.0))
}

fn summarize(label: &str, env: &mut PlacementEnv, r: &TrainResult) -> Result<Summary, HarnessError> {
    Ok(Summary {
        label: label.to_string(),
        episodes_run: r.episodes_run,
        initial_overhead: r.initial_overhead,
        best_overhead: r.best.best_overhead,
        best_thresholds: Some(r.best.best_thresholds),
        reduction: r.improvement(),
        hit_ratio: hit_ratio_at(env, r.best.best_thresholds)?,
        episodes_to_goal: r.episodes_to_goal(),
        goal_met: r.goal_met,
    })
}

/// Optional inputs of a learning run beyond the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Start from this policy instead of initializing one; the run then
    /// explores with the static ε of an initialized table.
    pub policy: Option<Policy>,
}

/// Trains the tabular agent according to `cfg` on `env`.
pub fn train_ql(
    cfg: &ExperimentConfig,
    env: &mut PlacementEnv,
    loaded: Option<QTable>,
) -> Result<(TrainResult, QTable), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = cfg.agent_config();
    let (mut q, run_cfg) = match (loaded, cfg.qtable_init) {
        (Some(q), _) => (q, base.exploiting()),
        (None, TableInit::Random) => (init_qtable(env, &QInit::Random, cfg.seed)?, base),
        (None, TableInit::FromTraining(n)) => {
            let sets = random_training_sets(n, &mut rng);
            let pre = AgentConfig { episode_cap: cfg.pretrain_cap, ..base };
            (init_qtable(env, &QInit::FromTraining { sets, cfg: pre }, cfg.seed)?, base.exploiting())
        }
    };
    let r = q_train(env, &mut q, &run_cfg, cfg.start_state(), &mut rng)?;
    Ok((r, q))
}

/// Trains the DQN agent according to `cfg` on `env`.
pub fn train_dqn(
    cfg: &ExperimentConfig,
    env: &mut PlacementEnv,
    loaded: Option<Mlp>,
) -> Result<(TrainResult, Mlp), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = cfg.dqn_config();
    let (mut agent, run_cfg) = match (loaded, cfg.qtable_init) {
        (Some(net), _) => (DqnAgent::with_net(net, &base), base.exploiting()),
        (None, TableInit::Random) => (init_dqn(env, &DqnInit::Random, &base, cfg.seed)?, base),
        (None, TableInit::FromTraining(n)) => {
            let sets = random_training_sets(n, &mut rng);
            let pre = DqnConfig { episode_cap: cfg.pretrain_cap, ..base };
            (init_dqn(env, &DqnInit::FromTraining { sets, cfg: pre }, &base, cfg.seed)?, base.exploiting())
        }
    };
    let r = dqn_train(env, &mut agent, &run_cfg, cfg.start_state(), &mut rng)?;
    Ok((r, agent.net))
}

/// Builds the partition instance of `env`'s pool: one rule per pooled flow,
/// `t` = the flow's packets over an episode, `s` = one entry.
pub fn oracle_instance(env: &PlacementEnv) -> (IlpInstance, Vec<FlowId>) {
    let packets = env.episode_packets();
    let ids = packets.iter().map(|p| p.0).collect();
    let rules = packets.iter().map(|&(_, t)| (t, RULE_SIZE_BITS)).collect();
    (IlpInstance { rules, capacity: env.capacity_bits() as i64 }, ids)
}

fn single_row(m_overhead: u64, hits: u64, misses: u64, hit_ratio: f64, reduction: f64, s0: ThresholdConfig) -> EpisodeRecord {
    EpisodeRecord {
        episode: 1,
        overhead: m_overhead,
        hits,
        misses,
        hit_ratio,
        reduction,
        thresholds: s0,
        reward: Reward::Zero,
        epsilon: 0.0,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let mut env = cfg.environment()?;
    let s0 = cfg.start_state();
    let mut report = RunReport {
        config: cfg.clone(),
        rows: Vec::new(),
        summary: Summary {
            label: cfg.mode.to_string(),
            episodes_run: 0,
            initial_overhead: 0,
            best_overhead: 0,
            best_thresholds: None,
            reduction: 0.0,
            hit_ratio: 0.0,
            episodes_to_goal: None,
            goal_met: false,
        },
        sections: Vec::new(),
        oracle_objective: None,
        policy: None,
    };
    match cfg.mode {
        Mode::Ql => {
            let loaded = match opts.policy {
                Some(Policy::Table(q)) => Some(q),
                Some(Policy::Net(_)) => {
                    return Err(HarnessError::Validation { field: "mode", msg: "a network policy needs mode=dqn".into() })
                }
                None => None,
            };
            let (r, q) = train_ql(cfg, &mut env, loaded)?;
            report.summary = summarize("ql", &mut env, &r)?;
            report.rows = r.trace;
            report.policy = Some(Policy::Table(q));
        }
        Mode::Dqn => {
            let loaded = match opts.policy {
                Some(Policy::Net(n)) => Some(n),
                Some(Policy::Table(_)) => {
                    return Err(HarnessError::Validation { field: "mode", msg: "a Q-table policy needs mode=ql".into() })
                }
                None => None,
            };
            let (r, net) = train_dqn(cfg, &mut env, loaded)?;
            report.summary = summarize("dqn", &mut env, &r)?;
            report.rows = r.trace;
            report.policy = Some(Policy::Net(net));
        }
        Mode::Mbf => {
            let initial = env.evaluate(s0)?.overhead;
            let plan = TickPlan::new(env.schedule());
            let mut table = FlowTable::new(cfg.table_capacity_bits);
            let mbf = MbfConfig { seed: cfg.seed, ..MbfConfig::default() };
            let m = run_mbf_plan(&plan, &mut table, &mbf)?;
            let hr = m.hit_ratio()?;
            let red = reduction_fraction(initial, m.overhead).unwrap_or(0.0);
            report.rows.push(single_row(m.overhead, m.hits, m.misses, hr, red, s0));
            report.summary = Summary {
                label: "mbf".into(),
                episodes_run: 1,
                initial_overhead: initial,
                best_overhead: m.overhead,
                best_thresholds: None,
                reduction: red,
                hit_ratio: hr,
                episodes_to_goal: None,
                goal_met: red > cfg.goal_mu,
            };
        }
        Mode::Oracle => {
            let initial = env.evaluate(s0)?.overhead;
            let (inst, ids) = oracle_instance(&env);
            let a = knapsack_exact(&inst)?;
            let ruleset: Vec<FlowId> = a.on_switch.iter().map(|&i| ids[i]).collect();
            let m = env.run_ruleset(&ruleset)?;
            let hr = m.hit_ratio()?;
            let red = reduction_fraction(initial, m.overhead).unwrap_or(0.0);
            report.rows.push(single_row(m.overhead, m.hits, m.misses, hr, red, s0));
            report.oracle_objective = Some(a.objective);
            report.summary = Summary {
                label: "oracle".into(),
                episodes_run: 1,
                initial_overhead: initial,
                best_overhead: m.overhead,
                best_thresholds: None,
                reduction: red,
                hit_ratio: hr,
                episodes_to_goal: None,
                goal_met: red > cfg.goal_mu,
            };
        }
        Mode::Significance => {
            // one reference overhead for all three studies: the start state
            // evaluated with both predicates active
            let mut both_env = env.clone().with_param_mode(ParamMode::Both);
            let common = both_env.evaluate(s0)?.overhead;
            for mode in [ParamMode::FreqOnly, ParamMode::RecentnessOnly, ParamMode::Both] {
                let sub = ExperimentConfig { param_mode: mode, ..cfg.clone() };
                let mut sub_env = env.clone().with_param_mode(mode);
                let r = match cfg.agent {
                    Learner::Ql => train_ql(&sub, &mut sub_env, None)?.0,
                    Learner::Dqn => train_dqn(&sub, &mut sub_env, None)?.0,
                };
                let mut s = summarize(&mode.to_string(), &mut sub_env, &r)?;
                s.reduction = reduction_fraction(common, r.best.best_overhead).unwrap_or(0.0);
                if mode == ParamMode::Both {
                    report.rows = r.trace.clone();
                    report.summary = Summary { label: "significance".into(), ..s.clone() };
                }
                report.sections.push(s);
            }
        }
    }
    Ok(report)
}

/// Reduction of each parameter mode in a significance report, in the order
/// freq_only, recentness_only, both.
pub fn significance_reductions(report: &RunReport) -> Option<[f64; 3]> {
    let get = |label: &str| report.sections.iter().find(|s| s.label == label).map(|s| s.reduction);
    Some([get("freq_only")?, get("recentness_only")?, get("both")?])
}
