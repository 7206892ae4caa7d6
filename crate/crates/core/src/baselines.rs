//! Reference points for the learning agents: a reactive Multiple Bloom Filter
//! (MBF) eviction policy and the exact rule-partition oracle.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::model::{FlowId, FlowRule, FlowTable, Lookup, SimTime};
use crate::simnet::EpisodeMetrics;
use crate::traffic::{FlowSchedule, TickPlan};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("baselines: capacity {0} is negative")]
    CapacityNegative(i64),
    #[error("baselines: brute force is limited to 20 rules, got {0}")]
    TooLarge(usize),
    #[error("baselines: rule {index} has zero size")]
    ZeroSize { index: usize },
    #[error("baselines: invalid MBF configuration: {0}")]
    InvalidMbf(String),
    #[error("baselines: instance line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A fixed-size bloom filter over flow ids using double hashing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u64>,
    m: usize,
    h: usize,
    seeds: (u64, u64),
}

impl BloomFilter {
    pub fn new(m: usize, h: usize, seeds: (u64, u64)) -> Self {
        BloomFilter { bits: vec![0; m.div_ceil(64)], m, h, seeds }
    }

    fn hash_with(seed: u64, id: &FlowId) -> u64 {
        let mut s = DefaultHasher::new();
        seed.hash(&mut s);
        id.hash(&mut s);
        s.finish()
    }

    fn positions(&self, id: &FlowId) -> impl Iterator<Item = usize> + '_ {
        let a = Self::hash_with(self.seeds.0, id);
        // odd stride so successive probes never collapse onto one slot mod 2^k
        let b = Self::hash_with(self.seeds.1, id) | 1;
        (0..self.h as u64).map(move |i| (a.wrapping_add(i.wrapping_mul(b)) % self.m as u64) as usize)
    }

    pub fn insert(&mut self, id: &FlowId) {
        let pos: Vec<usize> = self.positions(id).collect();
        for p in pos {
            self.bits[p / 64] |= 1 << (p % 64);
        }
    }

    pub fn contains(&self, id: &FlowId) -> bool {
        self.positions(id).all(|p| self.bits[p / 64] & (1 << (p % 64)) != 0)
    }

    pub fn clear(&mut self) {
        self.bits.iter_mut().for_each(|w| *w = 0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbfConfig {
    /// number of filters
    pub k: usize,
    /// bits per filter
    pub m: usize,
    /// hash functions per filter
    pub h: usize,
    /// seconds each filter stays newest
    pub window: SimTime,
    pub seed: u64,
}

impl Default for MbfConfig {
    fn default() -> Self {
        MbfConfig { k: 4, m: 4096, h: 3, window: 5, seed: 0 }
    }
}

impl MbfConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidMbf(m.to_string()));
        if self.k == 0 || self.k > 16 {
            return bad("k must lie in 1..=16");
        }
        if self.m == 0 || self.h == 0 {
            return bad("m and h must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        Ok(())
    }
}

/// Aging filters, newest first. Filter `j` carries weight `2^(k-1-j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbfState {
    filters: Vec<BloomFilter>,
    window: SimTime,
    epoch: SimTime,
}

impl MbfState {
    pub fn new(cfg: &MbfConfig) -> Result<Self, BaselineError> {
        cfg.validate()?;
        let seeds = (cfg.seed, cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        let filters = (0..cfg.k).map(|_| BloomFilter::new(cfg.m, cfg.h, seeds)).collect();
        Ok(MbfState { filters, window: cfg.window, epoch: 0 })
    }

    pub fn filters(&self) -> &[BloomFilter] {
        &self.filters
    }

    pub fn weights(&self) -> Vec<u32> {
        let k = self.filters.len() as u32;
        (0..k).map(|j| 1 << (k - 1 - j)).collect()
    }

    /// Ages the filters once per elapsed window boundary, then records every
    /// flow in `matched` in the newest filter.
    pub fn step<'a>(&mut self, matched: impl IntoIterator<Item = &'a FlowId>, tick: SimTime) {
        self.advance_to(tick);
        for id in matched {
            self.filters[0].insert(id);
        }
    }

    pub fn advance_to(&mut self, tick: SimTime) {
        let epoch = tick / self.window;
        let shifts = (epoch.saturating_sub(self.epoch)).min(self.filters.len() as u64);
        for _ in 0..shifts {
            let mut oldest = self.filters.pop().expect("k >= 1");
            oldest.clear();
            self.filters.insert(0, oldest);
        }
        self.epoch = self.epoch.max(epoch);
    }

    pub fn record(&mut self, id: &FlowId) {
        self.filters[0].insert(id);
    }

    /// Sum of the weights of the filters that report `id`.
    pub fn importance(&self, id: &FlowId) -> u32 {
        self.filters
            .iter()
            .zip(self.weights())
            .filter(|(f, _)| f.contains(id))
            .map(|(_, w)| w)
            .sum()
    }
}

/// Reactive episode: every miss installs the flow's rule, evicting the
/// least important entry when the table is full (ties: oldest install, then
/// lowest FlowId). Packets of one tick are interleaved round-robin across
/// flows in schedule order.
pub fn run_mbf_episode(
    schedule: &FlowSchedule,
    table: &mut FlowTable,
    cfg: &MbfConfig,
) -> Result<EpisodeMetrics, BaselineError> {
    let plan = TickPlan::new(schedule);
    run_mbf_plan(&plan, table, cfg)
}

pub(crate) fn run_mbf_plan(plan: &TickPlan, table: &mut FlowTable, cfg: &MbfConfig) -> Result<EpisodeMetrics, BaselineError> {
    let mut mbf = MbfState::new(cfg)?;
    table.clear();
    let mut m = EpisodeMetrics::default();
    for (tick, emissions) in plan.ticks.iter().enumerate() {
        let now = tick as SimTime;
        mbf.advance_to(now);
        let rounds = emissions.iter().map(|&(_, n)| n).max().unwrap_or(0);
        for round in 0..rounds {
            for &(idx, n) in emissions {
                if round >= n {
                    continue;
                }
                let id = plan.ids[idx];
                m.total_lookups += 1;
                match table.lookup(&id, now) {
                    Lookup::Hit => m.hits += 1,
                    Lookup::Miss => {
                        m.misses += 1;
                        if table.max_entries() > 0 {
                            if table.is_full() {
                                let victim = table
                                    .rules()
                                    .min_by_key(|r| (mbf.importance(&r.id), r.install_time, r.id))
                                    .map(|r| r.id)
                                    .expect("a full table with positive capacity has entries");
                                table.remove(&victim);
                            }
                            let mut rule = FlowRule::new(id, now);
                            rule.match_count = 1;
                            table.insert(rule).expect("room was made");
                        }
                    }
                }
                mbf.record(&id);
            }
        }
    }
    m.overhead = m.misses;
    m.duration = plan.ticks.len() as SimTime;
    Ok(m)
}

/// Rule partition problem: each rule either sits in the switch (costing its
/// size) or at the controller (costing its overhead `t`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IlpInstance {
    /// (t, s) per rule
    pub rules: Vec<(u64, u64)>,
    /// bits
    pub capacity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// 0-based indices of switch-resident rules
    pub on_switch: BTreeSet<usize>,
    /// Σ t over controller-resident rules
    pub objective: u64,
}

impl Assignment {
    /// Checks capacity and recomputes the objective.
    pub fn is_consistent_with(&self, inst: &IlpInstance) -> bool {
        if self.on_switch.iter().any(|&i| i >= inst.rules.len()) {
            return false;
        }
        let used: u64 = self.on_switch.iter().map(|&i| inst.rules[i].1).sum();
        let objective: u64 = (0..inst.rules.len())
            .filter(|i| !self.on_switch.contains(i))
            .map(|i| inst.rules[i].0)
            .sum();
        used as i128 <= inst.capacity as i128 && objective == self.objective
    }
}

impl IlpInstance {
    fn check(&self) -> Result<u64, BaselineError> {
        if self.capacity < 0 {
            return Err(BaselineError::CapacityNegative(self.capacity));
        }
        if let Some(index) = self.rules.iter().position(|&(_, s)| s == 0) {
            return Err(BaselineError::ZeroSize { index });
        }
        Ok(self.capacity as u64)
    }

    pub fn total_overhead(&self) -> u64 {
        self.rules.iter().map(|r| r.0).sum()
    }

    /// `capacity=<bits>` header, then one `t,s` line per rule.
    pub fn to_text(&self) -> String {
        let mut out = format!("capacity={}\n", self.capacity);
        for (t, s) in &self.rules {
            out.push_str(&format!("{t},{s}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BaselineError> {
        let mut capacity = None;
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| BaselineError::Parse { line: i + 1, msg: msg.to_string() };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("capacity=") {
                if capacity.is_some() {
                    return Err(err("duplicate capacity header"));
                }
                capacity = Some(v.trim().parse::<i64>().map_err(|_| err("bad capacity"))?);
                continue;
            }
            if capacity.is_none() {
                return Err(err("capacity header must come first"));
            }
            let (t, s) = line.split_once(',').ok_or_else(|| err("expected t,s"))?;
            let t = t.trim().parse::<u64>().map_err(|_| err("bad t"))?;
            let s = s.trim().parse::<u64>().map_err(|_| err("bad s"))?;
            if s == 0 {
                return Err(err("s must be positive"));
            }
            rules.push((t, s));
        }
        let capacity = capacity.ok_or(BaselineError::Parse { line: 1, msg: "missing capacity header".into() })?;
        Ok(IlpInstance { rules, capacity })
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.on_switch.iter().map(|i| i.to_string()).collect();
        write!(f, "objective {} on_switch [{}]", self.objective, idx.join(" "))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact optimum as a 0/1 knapsack over capacity / gcd(sizes). Among optimal
/// assignments the one placing the lowest indices on the switch wins
/// (lexicographically greatest switch-indicator vector).
pub fn knapsack_exact(inst: &IlpInstance) -> Result<Assignment, BaselineError> {
    let cap = inst.check()?;
    let n = inst.rules.len();
    let g = inst.rules.iter().fold(0, |acc, r| gcd(acc, r.1)).max(1);
    let w = (cap / g) as usize;
    let size: Vec<usize> = inst.rules.iter().map(|r| (r.1 / g) as usize).collect();

    // best[i][c]: largest on-switch Σt using rules i.. within c units
    let mut best = vec![vec![0u64; w + 1]; n + 1];
    for i in (0..n).rev() {
        let t = inst.rules[i].0;
        for c in 0..=w {
            let skip = best[i + 1][c];
            best[i][c] = if size[i] <= c { skip.max(t + best[i + 1][c - size[i]]) } else { skip };
        }
    }

    let mut on_switch = BTreeSet::new();
    let mut c = w;
    for i in 0..n {
        if size[i] <= c && inst.rules[i].0 + best[i + 1][c - size[i]] == best[i][c] {
            on_switch.insert(i);
            c -= size[i];
        }
    }
    let objective = inst.total_overhead() - best[0][w];
    Ok(Assignment { on_switch, objective })
}

/// Enumerates all 2^N assignments; same optimum and tie-break as
/// [`knapsack_exact`].
pub fn brute_force_partition(inst: &IlpInstance) -> Result<Assignment, BaselineError> {
    let cap = inst.check()?;
    let n = inst.rules.len();
    if n > 20 {
        return Err(BaselineError::TooLarge(n));
    }
    let total = inst.total_overhead();
    let mut best: Option<(u64, Vec<bool>)> = None;
    for mask in 0u32..(1 << n) {
        let indicator: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let used: u64 = (0..n).filter(|&i| indicator[i]).map(|i| inst.rules[i].1).sum();
        if used > cap {
            continue;
        }
        let on: u64 = (0..n).filter(|&i| indicator[i]).map(|i| inst.rules[i].0).sum();
        let obj = total - on;
        let better = match &best {
            None => true,
            Some((b, ind)) => obj < *b || (obj == *b && indicator > *ind),
        };
        if better {
            best = Some((obj, indicator));
        }
    }
    let (objective, indicator) = best.expect("the empty assignment is always feasible");
    let on_switch = (0..n).filter(|&i| indicator[i]).collect();
    Ok(Assignment { on_switch, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RULE_SIZE_BITS;
    use crate::traffic::{FlowClass, FlowSpec, TrafficProfile};

    fn fid(n: u16) -> FlowId {
        FlowId::new(1, 2, 40000 + n, 80).unwrap()
    }

    #[test]
    fn filters_age_out() {
        let cfg = MbfConfig::default();
        let mut s = MbfState::new(&cfg).unwrap();
        s.step([&fid(1)], 0);
        assert_eq!(s.importance(&fid(1)), 8);
        s.step([], 5);
        assert_eq!(s.importance(&fid(1)), 4);
        s.advance_to(25);
        assert_eq!(s.importance(&fid(1)), 0);
        assert!(s.filters().iter().all(|f| !f.contains(&fid(1))));
    }

    #[test]
    fn persistent_flow_scores_fifteen() {
        let mut s = MbfState::new(&MbfConfig::default()).unwrap();
        for w in 0..4 {
            s.step([&fid(3)], w * 5);
        }
        assert_eq!(s.importance(&fid(3)), 15);
        assert_eq!(s.weights(), vec![8, 4, 2, 1]);
    }

    #[test]
    fn unseen_flow_scores_zero() {
        let s = MbfState::new(&MbfConfig::default()).unwrap();
        assert_eq!(s.importance(&fid(9)), 0);
    }

    fn flow(n: u16, start: f64, packets: u64) -> FlowSpec {
        FlowSpec { id: fid(n), class: FlowClass::Mice, size: packets * 1500, start, duration: 0.0 }
    }

    fn schedule(flows: Vec<FlowSpec>, ppt: u64) -> FlowSchedule {
        let profile = TrafficProfile { per_flow_rate: (ppt * 1500 * 8) as f64, ..TrafficProfile::default() };
        FlowSchedule { profile, flows, horizon: 10, seed: 0 }
    }

    #[test]
    fn single_entry_thrashes_on_interleaved_flows() {
        let s = schedule(vec![flow(1, 0.0, 3), flow(2, 0.0, 3)], 3);
        let mut table = FlowTable::new(RULE_SIZE_BITS);
        let m = run_mbf_episode(&s, &mut table, &MbfConfig::default()).unwrap();
        assert_eq!((m.hits, m.misses, m.total_lookups), (0, 6, 6));
        assert_eq!(m.overhead, 6);
    }

    #[test]
    fn large_table_misses_once_per_flow() {
        let s = schedule(vec![flow(1, 0.0, 5), flow(2, 1.0, 4), flow(3, 2.0, 1)], 2);
        let mut table = FlowTable::new(10 * RULE_SIZE_BITS);
        let m = run_mbf_episode(&s, &mut table, &MbfConfig::default()).unwrap();
        assert_eq!((m.misses, m.hits), (3, 7));
        assert_eq!(table.len(), 3);
    }

    #[test]
    fn eviction_prefers_unimportant_entry() {
        // flow 1 is hot for several windows, flow 2 arrives once; flow 3 then
        // needs room and must push out flow 2
        let flows = vec![flow(1, 0.0, 12), flow(2, 11.0, 1), flow(3, 12.0, 2)];
        let s = schedule(flows, 1);
        let mut table = FlowTable::new(2 * RULE_SIZE_BITS);
        run_mbf_episode(&s, &mut table, &MbfConfig::default()).unwrap();
        assert!(table.contains(&fid(1)));
        assert!(table.contains(&fid(3)));
        assert!(!table.contains(&fid(2)));
    }

    #[test]
    fn knapsack_hand_example() {
        let inst = IlpInstance { rules: vec![(5, 6), (4, 5), (3, 5)], capacity: 10 };
        let a = knapsack_exact(&inst).unwrap();
        assert_eq!(a.on_switch, BTreeSet::from([1, 2]));
        assert_eq!(a.objective, 5);
        assert_eq!(brute_force_partition(&inst).unwrap(), a);
    }

    #[test]
    fn knapsack_extremes() {
        let rules = vec![(5, 6), (4, 5), (3, 5)];
        let all = knapsack_exact(&IlpInstance { rules: rules.clone(), capacity: 16 }).unwrap();
        assert_eq!((all.on_switch.len(), all.objective), (3, 0));
        let none = knapsack_exact(&IlpInstance { rules, capacity: 0 }).unwrap();
        assert!(none.on_switch.is_empty());
        assert_eq!(none.objective, 12);
    }

    #[test]
    fn single_rule_cases() {
        let fits = IlpInstance { rules: vec![(7, 3)], capacity: 3 };
        assert_eq!(brute_force_partition(&fits).unwrap().objective, 0);
        let too_big = IlpInstance { rules: vec![(7, 4)], capacity: 3 };
        let a = brute_force_partition(&too_big).unwrap();
        assert!(a.on_switch.is_empty());
        assert_eq!(a.objective, 7);
    }

    #[test]
    fn tie_break_prefers_low_indices() {
        let inst = IlpInstance { rules: vec![(2, 1), (2, 1), (2, 1)], capacity: 2 };
        let a = knapsack_exact(&inst).unwrap();
        assert_eq!(a.on_switch, BTreeSet::from([0, 1]));
        assert_eq!(brute_force_partition(&inst).unwrap(), a);
    }

    #[test]
    fn instance_errors() {
        let neg = IlpInstance { rules: vec![(1, 1)], capacity: -1 };
        assert_eq!(knapsack_exact(&neg), Err(BaselineError::CapacityNegative(-1)));
        let big = IlpInstance { rules: vec![(1, 1); 21], capacity: 5 };
        assert_eq!(brute_force_partition(&big), Err(BaselineError::TooLarge(21)));
    }

    #[test]
    fn instance_text_round_trip() {
        let inst = IlpInstance { rules: vec![(5, 6), (0, 356)], capacity: 712 };
        assert_eq!(IlpInstance::from_text(&inst.to_text()).unwrap(), inst);
        assert!(matches!(IlpInstance::from_text("capacity=3\n1;2\n"), Err(BaselineError::Parse { line: 2, .. })));
        assert!(IlpInstance::from_text("1,2\n").is_err());
    }
}
