//! Seeded elephant/mice flow schedules with Poisson arrivals and per-tick
//! packet emission.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::model::{FlowId, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic profile: {0}")]
    InvalidProfile(String),
    #[error("invalid schedule request: {0}")]
    InvalidRequest(String),
    #[error("schedule line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub elephant_fraction: f64,
    /// bytes
    pub mice_size: u64,
    /// bytes
    pub elephant_size: u64,
    /// offered load, bits per second
    pub aggregate_rate: f64,
    /// bytes
    pub packet_size: u64,
    /// bits per second per flow
    pub per_flow_rate: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            elephant_fraction: 0.1,
            mice_size: 262_144,
            elephant_size: 26_843_546,
            aggregate_rate: 310_000_000.0,
            packet_size: 1500,
            per_flow_rate: 10_000_000.0,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidProfile(m.to_string()));
        if !(0.0..=1.0).contains(&self.elephant_fraction) {
            return bad("elephant_fraction must lie in [0, 1]");
        }
        if self.mice_size == 0 || self.elephant_size == 0 || self.packet_size == 0 {
            return bad("flow and packet sizes must be positive");
        }
        if !(self.aggregate_rate.is_finite() && self.aggregate_rate > 0.0) {
            return bad("aggregate_rate must be positive");
        }
        if !(self.per_flow_rate.is_finite() && self.per_flow_rate > 0.0) {
            return bad("per_flow_rate must be positive");
        }
        if self.packets_per_tick() == 0 {
            return bad("per_flow_rate is below one packet per second");
        }
        Ok(())
    }

    /// round(per_flow_rate / (packet_size * 8))
    pub fn packets_per_tick(&self) -> u64 {
        (self.per_flow_rate / (self.packet_size as f64 * 8.0)).round() as u64
    }

    pub fn mean_flow_bits(&self) -> f64 {
        let f = self.elephant_fraction;
        8.0 * (f * self.elephant_size as f64 + (1.0 - f) * self.mice_size as f64)
    }

    /// Mean flow inter-arrival time such that the expected offered load
    /// equals `aggregate_rate`.
    pub fn mean_interarrival(&self) -> f64 {
        self.mean_flow_bits() / self.aggregate_rate
    }

    pub fn size_of(&self, class: FlowClass) -> u64 {
        match class {
            FlowClass::Elephant => self.elephant_size,
            FlowClass::Mice => self.mice_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowClass {
    Elephant,
    Mice,
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowClass::Elephant => "elephant",
            FlowClass::Mice => "mice",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub id: FlowId,
    pub class: FlowClass,
    /// bytes
    pub size: u64,
    /// seconds
    pub start: f64,
    /// seconds, size * 8 / per_flow_rate
    pub duration: f64,
}

impl FlowSpec {
    /// The tick in which the flow sends its first packet.
    pub fn first_tick(&self) -> SimTime {
        self.start.floor() as SimTime
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSchedule {
    pub profile: TrafficProfile,
    pub flows: Vec<FlowSpec>,
    pub horizon: SimTime,
    pub seed: u64,
}

/// Well-known destination ports the generator draws services from.
const SERVICE_PORTS: [u16; 8] = [22, 80, 443, 2049, 3306, 5001, 8080, 9000];
const EPHEMERAL: std::ops::RangeInclusive<u16> = 49152..=65535;

pub fn generate_schedule(
    profile: &TrafficProfile,
    horizon: SimTime,
    n_hosts: u16,
    seed: u64,
) -> Result<FlowSchedule, TrafficError> {
    profile.validate()?;
    if horizon == 0 {
        return Err(TrafficError::InvalidRequest("horizon must be positive".into()));
    }
    if n_hosts < 2 {
        return Err(TrafficError::InvalidRequest("at least two hosts are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(1.0 / profile.mean_interarrival())
        .map_err(|e| TrafficError::InvalidProfile(e.to_string()))?;
    let rate = profile.per_flow_rate;

    let mut used = HashSet::new();
    let mut flows = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= horizon as f64 {
            break;
        }
        let class = if rng.random_bool(profile.elephant_fraction) {
            FlowClass::Elephant
        } else {
            FlowClass::Mice
        };
        let src = rng.random_range(0..n_hosts);
        let mut dst = rng.random_range(0..n_hosts - 1);
        if dst >= src {
            dst += 1;
        }
        let dport = SERVICE_PORTS[rng.random_range(0..SERVICE_PORTS.len())];
        let id = loop {
            let sport = rng.random_range(EPHEMERAL);
            let id = FlowId::new(src, dst, sport, dport).expect("distinct hosts and nonzero ports");
            if used.insert(id) {
                break id;
            }
        };
        let size = profile.size_of(class);
        flows.push(FlowSpec { id, class, size, start: t, duration: size as f64 * 8.0 / rate });
    }
    Ok(FlowSchedule { profile: profile.clone(), flows, horizon, seed })
}

impl FlowSchedule {
    pub fn packets_per_tick(&self) -> u64 {
        self.profile.packets_per_tick()
    }

    /// ceil(size / packet_size)
    pub fn total_packets(&self, flow: &FlowSpec) -> u64 {
        flow.size.div_ceil(self.profile.packet_size)
    }

    /// Packets `flow` sends strictly before `tick`.
    pub fn emitted_before(&self, flow: &FlowSpec, tick: SimTime) -> u64 {
        let first = flow.first_tick();
        if tick <= first {
            return 0;
        }
        (self.packets_per_tick() * (tick - first)).min(self.total_packets(flow))
    }

    pub fn packets_in_tick(&self, flow: &FlowSpec, tick: SimTime) -> u64 {
        self.emitted_before(flow, tick + 1) - self.emitted_before(flow, tick)
    }

    /// First tick after which no flow sends anything. Flows start before the
    /// horizon but may keep draining past it.
    pub fn drain_end(&self) -> SimTime {
        let ppt = self.packets_per_tick();
        self.flows
            .iter()
            .map(|f| f.first_tick() + self.total_packets(f).div_ceil(ppt))
            .max()
            .unwrap_or(0)
    }

    /// Packet counts of every flow that sends during `tick`, in schedule order.
    pub fn packets_for_tick(&self, tick: SimTime) -> Vec<(FlowId, u64)> {
        // starts are sorted, so flows beginning after `tick` form a suffix
        let end = self.flows.partition_point(|f| f.first_tick() <= tick);
        self.flows[..end]
            .iter()
            .filter_map(|f| {
                let n = self.packets_in_tick(f, tick);
                (n > 0).then_some((f.id, n))
            })
            .collect()
    }

    /// Line-oriented text: `start,src,dst,sport,dport,class,size`, preceded by
    /// `#` header lines carrying the profile, horizon and seed.
    pub fn to_text(&self) -> String {
        let p = &self.profile;
        let mut out = format!(
            "# horizon={} seed={}\n# elephant_fraction={} mice_size={} elephant_size={} aggregate_rate={} packet_size={} per_flow_rate={}\n",
            self.horizon,
            self.seed,
            p.elephant_fraction,
            p.mice_size,
            p.elephant_size,
            p.aggregate_rate,
            p.packet_size,
            p.per_flow_rate
        );
        for f in &self.flows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.start, f.id.src_host, f.id.dst_host, f.id.src_port, f.id.dst_port, f.class, f.size
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrafficError> {
        let mut profile = TrafficProfile::default();
        let mut horizon = None;
        let mut seed = 0;
        let mut flows: Vec<FlowSpec> = Vec::new();
        let mut ids = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| TrafficError::Parse { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad header item `{kv}`")))?;
                    let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad value for {k}")));
                    match k {
                        "horizon" => horizon = Some(num(v)? as SimTime),
                        "seed" => seed = num(v)? as u64,
                        "elephant_fraction" => profile.elephant_fraction = num(v)?,
                        "mice_size" => profile.mice_size = num(v)? as u64,
                        "elephant_size" => profile.elephant_size = num(v)? as u64,
                        "aggregate_rate" => profile.aggregate_rate = num(v)?,
                        "packet_size" => profile.packet_size = num(v)? as u64,
                        "per_flow_rate" => profile.per_flow_rate = num(v)?,
                        other => return Err(err(format!("unknown header key `{other}`"))),
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(err("expected start,src,dst,sport,dport,class,size".into()));
            }
            let start: f64 = fields[0].parse().map_err(|_| err("bad start".into()))?;
            let int = |s: &str, what: &str| s.parse::<u16>().map_err(|_| err(format!("bad {what}")));
            let id = FlowId::new(
                int(fields[1], "src")?,
                int(fields[2], "dst")?,
                int(fields[3], "sport")?,
                int(fields[4], "dport")?,
            )
            .map_err(|e| err(e.to_string()))?;
            let class = match fields[5] {
                "elephant" => FlowClass::Elephant,
                "mice" => FlowClass::Mice,
                other => return Err(err(format!("unknown class `{other}`"))),
            };
            let size: u64 = fields[6].parse().map_err(|_| err("bad size".into()))?;
            if !(start.is_finite() && start >= 0.0) {
                return Err(err("start must be non-negative".into()));
            }
            if flows.last().is_some_and(|prev| prev.start > start) {
                return Err(err("starts must be non-decreasing".into()));
            }
            if !ids.insert(id) {
                return Err(err(format!("duplicate flow {id}")));
            }
            flows.push(FlowSpec { id, class, size, start, duration: 0.0 });
        }
        profile.validate()?;
        let horizon = horizon.ok_or_else(|| TrafficError::Parse { line: 1, msg: "missing horizon header".into() })?;
        if let Some(f) = flows.iter().find(|f| f.start >= horizon as f64) {
            return Err(TrafficError::InvalidRequest(format!("flow {} starts after the horizon", f.id)));
        }
        for f in &mut flows {
            f.duration = f.size as f64 * 8.0 / profile.per_flow_rate;
        }
        Ok(FlowSchedule { profile, flows, horizon, seed })
    }
}

/// Precomputed per-tick emissions of a schedule, shared by every episode that
/// replays it.
#[derive(Debug, Clone)]
pub struct TickPlan {
    pub ids: Vec<FlowId>,
    /// per tick: (index into `ids`, packet count)
    pub ticks: Vec<Vec<(usize, u64)>>,
}

impl TickPlan {
    pub fn new(schedule: &FlowSchedule) -> Self {
        let ids: Vec<FlowId> = schedule.flows.iter().map(|f| f.id).collect();
        let mut ticks = vec![Vec::new(); schedule.drain_end() as usize];
        for (i, f) in schedule.flows.iter().enumerate() {
            let first = f.first_tick();
            for tick in first..schedule.drain_end() {
                let n = schedule.packets_in_tick(f, tick);
                if n == 0 {
                    break;
                }
                ticks[tick as usize].push((i, n));
            }
        }
        TickPlan { ids, ticks }
    }

    pub fn total_packets(&self) -> u64 {
        self.ticks.iter().flatten().map(|(_, n)| n).sum()
    }
}
