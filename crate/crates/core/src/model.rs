//! Flow identities, forwarding rules, the capacity-bounded flow table, the
//! controller-side flow pool and threshold-based rule selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use thiserror::Error;

/// Simulation time in whole seconds (one tick per second).
pub type SimTime = u64;

/// Size of one exact-match flow entry in TCAM, in bits.
pub const RULE_SIZE_BITS: u64 = 356;

/// Frequency-threshold grid: 0, 10, ..., 200 matches.
pub const FREQ_STEP: u32 = 10;
pub const FREQ_MAX: u32 = 200;
/// Recentness-threshold grid: 0, 10, ..., 300 seconds.
pub const REC_STEP: u32 = 10;
pub const REC_MAX: u32 = 300;

pub const FREQ_LEVELS: usize = (FREQ_MAX / FREQ_STEP) as usize + 1;
pub const REC_LEVELS: usize = (REC_MAX / REC_STEP) as usize + 1;
/// 21 x 31 threshold states.
pub const STATE_COUNT: usize = FREQ_LEVELS * REC_LEVELS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("inserting {id} would exceed the table capacity of {capacity_bits} bits")]
    CapacityExceeded { id: FlowId, capacity_bits: u64 },
    #[error("rule {0} is already installed")]
    DuplicateRule(FlowId),
    #[error("invalid flow id: {0}")]
    InvalidFlowId(String),
    #[error("threshold ({freq}, {rec}) is not on the grid")]
    OffGrid { freq: u32, rec: u32 },
    #[error("pool snapshot line {line}: {msg}")]
    Snapshot { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proto {
    Tcp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proto::Tcp => f.write_str("tcp"),
        }
    }
}

/// Exact-match key of a flow entry. Ordering is lexicographic over the fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId {
    pub src_host: u16,
    pub dst_host: u16,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
}

impl FlowId {
    pub fn new(src_host: u16, dst_host: u16, src_port: u16, dst_port: u16) -> Result<Self, ModelError> {
        let id = FlowId { src_host, dst_host, src_port, dst_port, proto: Proto::Tcp };
        if src_host == dst_host {
            return Err(ModelError::InvalidFlowId(format!("{id}: source equals destination")));
        }
        if src_port == 0 || dst_port == 0 {
            return Err(ModelError::InvalidFlowId(format!("{id}: port 0")));
        }
        Ok(id)
    }
}

/// Rendered as `src:sport>dst:dport/tcp`; contains no commas so it can sit in CSV.
impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}>{}:{}/{}",
            self.src_host, self.src_port, self.dst_host, self.dst_port, self.proto
        )
    }
}

impl FromStr for FlowId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidFlowId(s.to_string());
        let (endpoints, proto) = s.split_once('/').ok_or_else(bad)?;
        if proto != "tcp" {
            return Err(bad());
        }
        let (src, dst) = endpoints.split_once('>').ok_or_else(bad)?;
        let (sh, sp) = src.split_once(':').ok_or_else(bad)?;
        let (dh, dp) = dst.split_once(':').ok_or_else(bad)?;
        let num = |x: &str| x.trim().parse::<u16>().map_err(|_| bad());
        FlowId::new(num(sh)?, num(dh)?, num(sp)?, num(dp)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRule {
    pub id: FlowId,
    pub size_bits: u64,
    pub match_count: u64,
    pub last_match_time: SimTime,
    pub install_time: SimTime,
}

impl FlowRule {
    pub fn new(id: FlowId, install_time: SimTime) -> Self {
        FlowRule {
            id,
            size_bits: RULE_SIZE_BITS,
            match_count: 0,
            last_match_time: install_time,
            install_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

/// Switch flow table bounded by a TCAM budget in bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowTable {
    capacity_bits: u64,
    entries: BTreeMap<FlowId, FlowRule>,
}

impl FlowTable {
    pub fn new(capacity_bits: u64) -> Self {
        FlowTable { capacity_bits, entries: BTreeMap::new() }
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    /// Largest number of 356-bit entries that fit.
    pub fn max_entries(&self) -> usize {
        max_entries(self.capacity_bits)
    }

    pub fn used_bits(&self) -> u64 {
        self.entries.values().map(|r| r.size_bits).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.used_bits() + RULE_SIZE_BITS > self.capacity_bits
    }

    pub fn contains(&self, id: &FlowId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &FlowId) -> Option<&FlowRule> {
        self.entries.get(id)
    }

    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.entries.values()
    }

    pub fn insert(&mut self, rule: FlowRule) -> Result<(), ModelError> {
        if self.entries.contains_key(&rule.id) {
            return Err(ModelError::DuplicateRule(rule.id));
        }
        if self.used_bits() + rule.size_bits > self.capacity_bits {
            return Err(ModelError::CapacityExceeded { id: rule.id, capacity_bits: self.capacity_bits });
        }
        self.entries.insert(rule.id, rule);
        Ok(())
    }

    pub fn remove(&mut self, id: &FlowId) -> Option<FlowRule> {
        self.entries.remove(id)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn lookup(&mut self, id: &FlowId, now: SimTime) -> Lookup {
        self.lookup_n(id, now, 1)
    }

    /// Same as `packets` consecutive lookups of `id` at `now`.
    pub fn lookup_n(&mut self, id: &FlowId, now: SimTime, packets: u64) -> Lookup {
        match self.entries.get_mut(id) {
            Some(rule) => {
                if packets > 0 {
                    rule.match_count += packets;
                    rule.last_match_time = now;
                }
                Lookup::Hit
            }
            None => Lookup::Miss,
        }
    }
}

pub fn max_entries(capacity_bits: u64) -> usize {
    (capacity_bits / RULE_SIZE_BITS) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolRecord {
    pub freq: u64,
    pub last_seen: SimTime,
}

impl PoolRecord {
    pub fn recentness(&self, window_close: SimTime) -> SimTime {
        window_close.saturating_sub(self.last_seen)
    }
}

/// Every distinct flow the controller observed during orchestration, in
/// first-observation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowPool {
    records: IndexMap<FlowId, PoolRecord>,
}

impl FlowPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, id: FlowId, now: SimTime) {
        self.record_n(id, now, 1);
    }

    /// Same as `packets` observations of `id` at `now`; zero is a no-op.
    pub fn record_n(&mut self, id: FlowId, now: SimTime, packets: u64) {
        if packets == 0 {
            return;
        }
        let rec = self.records.entry(id).or_insert(PoolRecord { freq: 0, last_seen: now });
        rec.freq += packets;
        rec.last_seen = now;
    }

    pub fn get(&self, id: &FlowId) -> Option<&PoolRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowId, &PoolRecord)> {
        self.records.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &FlowId> {
        self.records.keys()
    }

    /// One `flow_id,freq,last_seen` line per record, in pool order.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for (id, r) in &self.records {
            out.push_str(&format!("{id},{},{}\n", r.freq, r.last_seen));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, ModelError> {
        let mut pool = FlowPool::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| ModelError::Snapshot { line: i + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(err("expected flow_id,freq,last_seen"));
            }
            let id: FlowId = fields[0].parse().map_err(|_| err("bad flow id"))?;
            let freq: u64 = fields[1].parse().map_err(|_| err("bad freq"))?;
            let last_seen: SimTime = fields[2].parse().map_err(|_| err("bad last_seen"))?;
            if freq == 0 {
                return Err(err("freq must be at least 1"));
            }
            if pool.records.insert(id, PoolRecord { freq, last_seen }).is_some() {
                return Err(err("duplicate flow id"));
            }
        }
        Ok(pool)
    }
}

/// The agent's state: a point on the (frequency, recentness) threshold grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThresholdConfig {
    freq: u32,
    rec: u32,
}

impl ThresholdConfig {
    pub fn new(freq: u32, rec: u32) -> Result<Self, ModelError> {
        if freq > FREQ_MAX || rec > REC_MAX || !freq.is_multiple_of(FREQ_STEP) || !rec.is_multiple_of(REC_STEP) {
            return Err(ModelError::OffGrid { freq, rec });
        }
        Ok(ThresholdConfig { freq, rec })
    }

    pub fn freq(&self) -> u32 {
        self.freq
    }

    pub fn rec(&self) -> u32 {
        self.rec
    }

    /// Dense index in `0..STATE_COUNT`, frequency-major.
    pub fn index(&self) -> usize {
        (self.freq / FREQ_STEP) as usize * REC_LEVELS + (self.rec / REC_STEP) as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= STATE_COUNT {
            return None;
        }
        Some(ThresholdConfig {
            freq: (index / REC_LEVELS) as u32 * FREQ_STEP,
            rec: (index % REC_LEVELS) as u32 * REC_STEP,
        })
    }

    pub fn all() -> impl Iterator<Item = ThresholdConfig> {
        (0..STATE_COUNT).filter_map(ThresholdConfig::from_index)
    }

    pub(crate) fn with_freq(self, freq: u32) -> Self {
        ThresholdConfig { freq: freq.min(FREQ_MAX), ..self }
    }

    pub(crate) fn with_rec(self, rec: u32) -> Self {
        ThresholdConfig { rec: rec.min(REC_MAX), ..self }
    }
}

impl fmt::Display for ThresholdConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.freq, self.rec)
    }
}

/// Which threshold predicates take part in rule selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParamMode {
    #[default]
    Both,
    FreqOnly,
    RecentnessOnly,
}

impl ParamMode {
    pub fn uses_freq(self) -> bool {
        matches!(self, ParamMode::Both | ParamMode::FreqOnly)
    }

    pub fn uses_rec(self) -> bool {
        matches!(self, ParamMode::Both | ParamMode::RecentnessOnly)
    }
}

impl fmt::Display for ParamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamMode::Both => "both",
            ParamMode::FreqOnly => "freq_only",
            ParamMode::RecentnessOnly => "recentness_only",
        })
    }
}

impl FromStr for ParamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(ParamMode::Both),
            "freq_only" => Ok(ParamMode::FreqOnly),
            "recentness_only" | "rec_only" => Ok(ParamMode::RecentnessOnly),
            other => Err(format!("unknown param mode `{other}`")),
        }
    }
}

pub fn is_eligible(rec: &PoolRecord, t: ThresholdConfig, mode: ParamMode, window_close: SimTime) -> bool {
    let by_freq = mode.uses_freq() && rec.freq >= u64::from(t.freq);
    let by_rec = mode.uses_rec() && rec.recentness(window_close) <= u64::from(t.rec);
    by_freq || by_rec
}

/// Rules to preinstall: flows with `freq >= freq_thr` OR `recentness <= rec_thr`.
pub fn select_rules(
    pool: &FlowPool,
    thresholds: ThresholdConfig,
    capacity_bits: u64,
    window_close: SimTime,
) -> Vec<FlowId> {
    select_rules_with(pool, thresholds, ParamMode::Both, capacity_bits, window_close)
}

/// Selection restricted to the predicates enabled by `mode`.
///
/// When more flows are eligible than fit, the table admits them in the order
/// the controller first observed them (pool order) and rejects the rest.
pub fn select_rules_with(
    pool: &FlowPool,
    thresholds: ThresholdConfig,
    mode: ParamMode,
    capacity_bits: u64,
    window_close: SimTime,
) -> Vec<FlowId> {
    let limit = max_entries(capacity_bits);
    pool.iter()
        .filter(|(_, r)| is_eligible(r, thresholds, mode, window_close))
        .map(|(id, _)| *id)
        .take(limit)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fid(n: u16) -> FlowId {
        FlowId::new(1, 2, 40000 + n, 5001).unwrap()
    }

    #[test]
    fn insert_until_capacity() {
        let mut t = FlowTable::new(712);
        t.insert(FlowRule::new(fid(1), 0)).unwrap();
        t.insert(FlowRule::new(fid(2), 0)).unwrap();
        assert_eq!(t.len(), 2);
        let err = t.insert(FlowRule::new(fid(3), 0)).unwrap_err();
        assert!(matches!(err, ModelError::CapacityExceeded { .. }));
        assert_eq!(t.used_bits(), 712);
    }

    #[test]
    fn duplicate_insert_rejected() {
        let mut t = FlowTable::new(712);
        t.insert(FlowRule::new(fid(1), 0)).unwrap();
        assert_eq!(t.insert(FlowRule::new(fid(1), 3)), Err(ModelError::DuplicateRule(fid(1))));
    }

    #[test]
    fn lookup_counts_hits() {
        let mut t = FlowTable::new(712);
        let mut r = FlowRule::new(fid(1), 0);
        r.match_count = 4;
        t.insert(r).unwrap();
        assert_eq!(t.lookup(&fid(1), 10), Lookup::Hit);
        let r = t.get(&fid(1)).unwrap();
        assert_eq!((r.match_count, r.last_match_time), (5, 10));

        let before = t.clone();
        assert_eq!(t.lookup(&fid(2), 11), Lookup::Miss);
        assert_eq!(t, before);
        assert_eq!(FlowTable::new(712).lookup(&fid(9), 0), Lookup::Miss);
    }

    #[test]
    fn pool_record_semantics() {
        let mut p = FlowPool::new();
        p.record(fid(1), 3);
        assert_eq!(p.get(&fid(1)), Some(&PoolRecord { freq: 1, last_seen: 3 }));
        p.record(fid(1), 8);
        assert_eq!(p.get(&fid(1)), Some(&PoolRecord { freq: 2, last_seen: 8 }));
        p.record(fid(2), 8);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn two_megabit_table_entry_count() {
        // 2_097_152 / 356 = 5890.87
        assert_eq!(max_entries(2_097_152), 5890);
    }

    #[test]
    fn or_predicate_selection() {
        // A: freq 120 last seen long ago; B: rare but recent; C: rare and stale.
        let close = 1000;
        let mut p = FlowPool::new();
        p.record_n(fid(1), close - 500, 120);
        p.record_n(fid(2), close - 20, 10);
        p.record_n(fid(3), close - 200, 10);
        let t = ThresholdConfig::new(90, 30).unwrap();
        assert_eq!(select_rules(&p, t, 10 * RULE_SIZE_BITS, close), vec![fid(1), fid(2)]);
    }

    #[test]
    fn vacuous_predicate_truncates_to_capacity() {
        let mut p = FlowPool::new();
        for n in 0..10 {
            p.record(fid(n), 5);
        }
        let t = ThresholdConfig::new(0, 300).unwrap();
        let picked = select_rules(&p, t, 4 * RULE_SIZE_BITS, 60);
        assert_eq!(picked, (0..4).map(fid).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_keeps_observation_order() {
        // Three eligible flows, room for two: the first two observed win.
        let mut p = FlowPool::new();
        p.record_n(fid(7), 1, 50);
        p.record_n(fid(3), 2, 500);
        p.record_n(fid(5), 3, 100);
        let t = ThresholdConfig::new(0, 0).unwrap();
        assert_eq!(select_rules(&p, t, 712, 10), vec![fid(7), fid(3)]);
    }

    #[test]
    fn single_parameter_modes() {
        let close = 60;
        let mut p = FlowPool::new();
        p.record_n(fid(1), 10, 150); // frequent, stale
        p.record_n(fid(2), 59, 5); // rare, recent
        let t = ThresholdConfig::new(100, 10).unwrap();
        let cap = 10 * RULE_SIZE_BITS;
        assert_eq!(select_rules_with(&p, t, ParamMode::FreqOnly, cap, close), vec![fid(1)]);
        assert_eq!(select_rules_with(&p, t, ParamMode::RecentnessOnly, cap, close), vec![fid(2)]);
        assert_eq!(select_rules_with(&p, t, ParamMode::Both, cap, close), vec![fid(1), fid(2)]);
    }

    #[test]
    fn threshold_grid() {
        assert!(ThresholdConfig::new(90, 30).is_ok());
        assert!(ThresholdConfig::new(95, 30).is_err());
        assert!(ThresholdConfig::new(210, 30).is_err());
        assert!(ThresholdConfig::new(0, 310).is_err());
        assert_eq!(STATE_COUNT, 651);
        for (i, t) in ThresholdConfig::all().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn flow_id_text_round_trip() {
        let id = FlowId::new(3, 17, 49152, 5001).unwrap();
        assert_eq!(id.to_string(), "3:49152>17:5001/tcp");
        assert_eq!(id.to_string().parse::<FlowId>().unwrap(), id);
        assert!("3:1>3:1/tcp".parse::<FlowId>().is_err());
        assert!("3:0>4:1/tcp".parse::<FlowId>().is_err());
        assert!("3:1>4:1/udp".parse::<FlowId>().is_err());
    }

    #[test]
    fn snapshot_round_trip_and_errors() {
        let mut p = FlowPool::new();
        p.record_n(fid(4), 7, 3);
        p.record_n(fid(1), 9, 12);
        let text = p.to_snapshot();
        assert_eq!(FlowPool::from_snapshot(&text).unwrap(), p);
        let err = FlowPool::from_snapshot("1:40001>2:5001/tcp,0,3\n").unwrap_err();
        assert!(matches!(err, ModelError::Snapshot { line: 1, .. }));
    }
}
