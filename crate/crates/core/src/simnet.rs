//! Switch/controller episode engine.
//!
//! An orchestration run replays the first `window` seconds of a schedule and
//! builds the controller's flow pool. A production episode replays the whole
//! schedule against a table preloaded with a fixed ruleset: every packet that
//! misses raises a PacketIn at the controller, and each PacketIn costs one
//! unit of control-plane overhead. Misses never install rules mid-episode.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::model::{
    select_rules_with, FlowId, FlowPool, FlowRule, FlowTable, Lookup, ModelError, ParamMode, SimTime,
    ThresholdConfig,
};
use crate::traffic::{FlowSchedule, TickPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("ruleset of {rules} entries does not fit a table of {capacity} entries")]
    RulesetTooLarge { rules: usize, capacity: usize },
    #[error("orchestration window {window}s exceeds the schedule horizon {horizon}s")]
    WindowTooLong { window: SimTime, horizon: SimTime },
    #[error("reduction is undefined for a zero initial overhead")]
    ZeroInitial,
    #[error("hit ratio is undefined for an episode without lookups")]
    NoLookups,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ConnectionUp,
    ConnectionDown,
    PacketIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub kind: EventKind,
    pub time: SimTime,
    pub flow: Option<FlowId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeMetrics {
    pub overhead: u64,
    pub hits: u64,
    pub misses: u64,
    pub total_lookups: u64,
    pub duration: SimTime,
}

impl EpisodeMetrics {
    pub fn hit_ratio(&self) -> Result<f64, SimError> {
        hit_ratio(self)
    }
}

pub fn hit_ratio(m: &EpisodeMetrics) -> Result<f64, SimError> {
    if m.total_lookups == 0 {
        return Err(SimError::NoLookups);
    }
    Ok(m.hits as f64 / m.total_lookups as f64)
}

/// (initial - current) / initial; negative when the current overhead is worse.
pub fn reduction_fraction(initial: u64, current: u64) -> Result<f64, SimError> {
    if initial == 0 {
        return Err(SimError::ZeroInitial);
    }
    Ok((initial as f64 - current as f64) / initial as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reward {
    Negative,
    Zero,
    Positive,
}

impl Reward {
    pub fn value(self) -> i8 {
        match self {
            Reward::Negative => -1,
            Reward::Zero => 0,
            Reward::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Reward::Negative),
            0 => Some(Reward::Zero),
            1 => Some(Reward::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Lowest overhead seen so far in one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BestSoFar {
    pub best_overhead: u64,
    pub best_thresholds: ThresholdConfig,
}

impl BestSoFar {
    pub fn new(best_overhead: u64, best_thresholds: ThresholdConfig) -> Self {
        BestSoFar { best_overhead, best_thresholds }
    }
}

/// +1 and a new best when `current` beats the best, 0 on a tie, -1 otherwise.
pub fn compute_reward(best: &mut BestSoFar, current_overhead: u64, thresholds: ThresholdConfig) -> Reward {
    use std::cmp::Ordering::*;
    match current_overhead.cmp(&best.best_overhead) {
        Less => {
            best.best_overhead = current_overhead;
            best.best_thresholds = thresholds;
            Reward::Positive
        }
        Equal => Reward::Zero,
        Greater => Reward::Negative,
    }
}

/// Controller side of an episode: counts one overhead unit per PacketIn.
#[derive(Debug, Default)]
struct Controller {
    overhead: u64,
}

impl Controller {
    fn on_connection_up(&mut self, table: &mut FlowTable, ruleset: &[FlowId]) -> Result<(), SimError> {
        table.clear();
        for id in ruleset {
            table.insert(FlowRule::new(*id, 0))?;
        }
        Ok(())
    }

    fn on_packet_in(&mut self, packets: u64) {
        self.overhead += packets;
    }
}

/// Builds the controller's flow pool from the first `window` seconds of traffic.
pub fn run_orchestration(schedule: &FlowSchedule, window: SimTime) -> Result<FlowPool, SimError> {
    if window > schedule.horizon {
        return Err(SimError::WindowTooLong { window, horizon: schedule.horizon });
    }
    let mut pool = FlowPool::new();
    for tick in 0..window {
        for (id, n) in schedule.packets_for_tick(tick) {
            pool.record_n(id, tick, n);
        }
    }
    Ok(pool)
}

pub fn run_episode(ruleset: &[FlowId], schedule: &FlowSchedule, table: &mut FlowTable) -> Result<EpisodeMetrics, SimError> {
    let plan = TickPlan::new(schedule);
    replay_episode(ruleset, &plan, table, &mut |_| {})
}

/// Like [`run_episode`], also reporting every controller event to `sink`
/// (one PacketIn per missed packet).
pub fn run_episode_traced(
    ruleset: &[FlowId],
    schedule: &FlowSchedule,
    table: &mut FlowTable,
    sink: &mut dyn FnMut(SimEvent),
) -> Result<EpisodeMetrics, SimError> {
    let plan = TickPlan::new(schedule);
    replay_episode(ruleset, &plan, table, sink)
}

pub(crate) fn replay_episode(
    ruleset: &[FlowId],
    plan: &TickPlan,
    table: &mut FlowTable,
    sink: &mut dyn FnMut(SimEvent),
) -> Result<EpisodeMetrics, SimError> {
    if ruleset.len() > table.max_entries() {
        return Err(SimError::RulesetTooLarge { rules: ruleset.len(), capacity: table.max_entries() });
    }
    let mut controller = Controller::default();
    sink(SimEvent { kind: EventKind::ConnectionUp, time: 0, flow: None });
    controller.on_connection_up(table, ruleset)?;

    let mut m = EpisodeMetrics::default();
    for (tick, emissions) in plan.ticks.iter().enumerate() {
        let now = tick as SimTime;
        for &(idx, n) in emissions {
            let id = plan.ids[idx];
            m.total_lookups += n;
            match table.lookup_n(&id, now, n) {
                Lookup::Hit => m.hits += n,
                Lookup::Miss => {
                    m.misses += n;
                    controller.on_packet_in(n);
                    for _ in 0..n {
                        sink(SimEvent { kind: EventKind::PacketIn, time: now, flow: Some(id) });
                    }
                }
            }
        }
    }
    m.duration = plan.ticks.len() as SimTime;
    m.overhead = controller.overhead;
    sink(SimEvent { kind: EventKind::ConnectionDown, time: m.duration, flow: None });
    Ok(m)
}

/// Something a learning agent can probe with a threshold configuration.
pub trait Environment {
    fn evaluate(&mut self, thresholds: ThresholdConfig) -> Result<EpisodeMetrics, SimError>;

    /// Which threshold parameters influence the outcome.
    fn param_mode(&self) -> ParamMode {
        ParamMode::Both
    }
}

/// One orchestrated workload: the pool is built once, and each evaluation
/// selects rules from it and replays a production episode.
#[derive(Debug, Clone)]
pub struct PlacementEnv {
    schedule: FlowSchedule,
    plan: TickPlan,
    pool: FlowPool,
    window: SimTime,
    table: FlowTable,
    mode: ParamMode,
}

impl PlacementEnv {
    pub fn new(schedule: FlowSchedule, window: SimTime, capacity_bits: u64) -> Result<Self, SimError> {
        let pool = run_orchestration(&schedule, window)?;
        let plan = TickPlan::new(&schedule);
        Ok(PlacementEnv { schedule, plan, pool, window, table: FlowTable::new(capacity_bits), mode: ParamMode::Both })
    }

    pub fn with_param_mode(mut self, mode: ParamMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn schedule(&self) -> &FlowSchedule {
        &self.schedule
    }

    pub fn pool(&self) -> &FlowPool {
        &self.pool
    }

    pub fn window(&self) -> SimTime {
        self.window
    }

    pub fn capacity_bits(&self) -> u64 {
        self.table.capacity_bits()
    }

    pub fn ruleset(&self, thresholds: ThresholdConfig) -> Vec<FlowId> {
        select_rules_with(&self.pool, thresholds, self.mode, self.table.capacity_bits(), self.window)
    }

    pub fn run_ruleset(&mut self, ruleset: &[FlowId]) -> Result<EpisodeMetrics, SimError> {
        replay_episode(ruleset, &self.plan, &mut self.table, &mut |_| {})
    }

    /// Packets each pool flow sends over a full episode, in pool order.
    pub fn episode_packets(&self) -> Vec<(FlowId, u64)> {
        let mut per_flow = vec![0u64; self.plan.ids.len()];
        for tick in &self.plan.ticks {
            for &(i, n) in tick {
                per_flow[i] += n;
            }
        }
        let totals: std::collections::HashMap<FlowId, u64> =
            self.plan.ids.iter().copied().zip(per_flow).collect();
        self.pool.ids().map(|id| (*id, totals[id])).collect()
    }

    pub fn total_packets(&self) -> u64 {
        self.plan.total_packets()
    }
}

impl Environment for PlacementEnv {
    fn evaluate(&mut self, thresholds: ThresholdConfig) -> Result<EpisodeMetrics, SimError> {
        let rules = self.ruleset(thresholds);
        self.run_ruleset(&rules)
    }

    fn param_mode(&self) -> ParamMode {
        self.mode
    }
}

/// One row of the per-episode CSV report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub overhead: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_ratio: f64,
    pub reduction: f64,
    pub thresholds: ThresholdConfig,
    pub reward: Reward,
    pub epsilon: f64,
}

pub const EPISODE_CSV_HEADER: &str = "episode,overhead,hits,misses,hit_ratio,reduction,freq_thr,rec_thr,reward,epsilon";

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{},{},{},{:.6}",
            self.episode,
            self.overhead,
            self.hits,
            self.misses,
            self.hit_ratio,
            self.reduction,
            self.thresholds.freq(),
            self.thresholds.rec(),
            self.reward,
            self.epsilon
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return None;
        }
        Some(EpisodeRecord {
            episode: f[0].parse().ok()?,
            overhead: f[1].parse().ok()?,
            hits: f[2].parse().ok()?,
            misses: f[3].parse().ok()?,
            hit_ratio: f[4].parse().ok()?,
            reduction: f[5].parse().ok()?,
            thresholds: ThresholdConfig::new(f[6].parse().ok()?, f[7].parse().ok()?).ok()?,
            reward: Reward::from_value(f[8].parse().ok()?)?,
            epsilon: f[9].parse().ok()?,
        })
    }
}

pub fn write_episode_csv<W: Write>(out: &mut W, rows: &[EpisodeRecord]) -> std::io::Result<()> {
    writeln!(out, "{EPISODE_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
