//! Deterministic discrete-event network: per-link latency, per-link egress
//! serialization and a per-node CPU queue.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pbft::{Dest, MsgKind, NodeId, Outbound, PbftMessage};

pub const NANOS: u64 = 1_000_000_000;

pub fn secs_to_ns(s: f64) -> u64 {
    (s * NANOS as f64).round().max(0.0) as u64
}

pub fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / NANOS as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub latency_s: f64,
    /// `None` means no bandwidth limit.
    pub bandwidth_bps: Option<f64>,
}

impl LinkModel {
    pub fn serialization_s(&self, size: usize) -> f64 {
        match self.bandwidth_bps {
            Some(bw) => 8.0 * size as f64 / bw,
            None => 0.0,
        }
    }
}

/// One-way delivery time of a message on an idle link.
pub fn transfer_time(size: usize, link: &LinkModel) -> f64 {
    link.latency_s + link.serialization_s(size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bandwidth {
    Slow,
    Medium,
    Fast,
    Unlimited,
}

impl Bandwidth {
    pub const TABLE: [Bandwidth; 3] = [Bandwidth::Slow, Bandwidth::Medium, Bandwidth::Fast];

    pub fn bps(self) -> Option<f64> {
        self.mbps().map(|m| m * 1e6)
    }

    pub fn mbps(self) -> Option<f64> {
        match self {
            Bandwidth::Slow => Some(0.1),
            Bandwidth::Medium => Some(30.0),
            Bandwidth::Fast => Some(125.0),
            Bandwidth::Unlimited => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bandwidth::Slow => "slow",
            Bandwidth::Medium => "medium",
            Bandwidth::Fast => "fast",
            Bandwidth::Unlimited => "unlimited",
        }
    }

    pub fn from_name(s: &str) -> Option<Bandwidth> {
        [Bandwidth::Slow, Bandwidth::Medium, Bandwidth::Fast, Bandwidth::Unlimited].into_iter().find(|b| b.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub latency_min_s: f64,
    pub latency_max_s: f64,
    pub bandwidth_bps: Option<f64>,
    /// Receive-side processing cost per message.
    pub cpu_per_msg_s: f64,
    pub cpu_per_byte_s: f64,
    pub watchdog_s: f64,
    pub seed: u64,
}

impl NetConfig {
    pub const DEFAULT_CPU_PER_MSG_S: f64 = 0.002;
    pub const DEFAULT_CPU_PER_BYTE_S: f64 = 3e-7;
    pub const DEFAULT_WATCHDOG_S: f64 = 180.0;

    /// Wide-area links with latency drawn from 30–300 ms.
    pub fn wan(bandwidth: Bandwidth, seed: u64) -> Self {
        NetConfig {
            latency_min_s: 0.030,
            latency_max_s: 0.300,
            bandwidth_bps: bandwidth.bps(),
            cpu_per_msg_s: Self::DEFAULT_CPU_PER_MSG_S,
            cpu_per_byte_s: Self::DEFAULT_CPU_PER_BYTE_S,
            watchdog_s: Self::DEFAULT_WATCHDOG_S,
            seed,
        }
    }

    /// All replicas on one machine: no latency or bandwidth limit, only CPU.
    pub fn localhost(seed: u64) -> Self {
        NetConfig { latency_min_s: 0.0, latency_max_s: 0.0, bandwidth_bps: None, ..NetConfig::wan(Bandwidth::Unlimited, seed) }
    }

    /// Zero-cost network, useful for logic-only tests.
    pub fn ideal(seed: u64) -> Self {
        NetConfig { cpu_per_msg_s: 0.0, cpu_per_byte_s: 0.0, ..NetConfig::localhost(seed) }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_min_s >= 0.0 && self.latency_min_s <= self.latency_max_s) {
            return Err("latency range".into());
        }
        if self.bandwidth_bps.is_some_and(|b| b.is_nan() || b <= 0.0) {
            return Err("bandwidth".into());
        }
        if !(self.cpu_per_msg_s >= 0.0 && self.cpu_per_byte_s >= 0.0 && self.watchdog_s > 0.0) {
            return Err("cpu or watchdog".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub time_ns: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MsgKind,
    pub bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Trace {
    pub const HEADER: &'static str = "time,from,to,kind,bytes";

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.rows.len() + 32);
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{:.9},{},{},{},{}", ns_to_secs(r.time_ns), r.from, r.to, r.kind.name(), r.bytes);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == Self::HEADER => {}
            _ => return Err(TraceError::Parse { line: 1, msg: "missing header".into() }),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| TraceError::Parse { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let t: f64 = f[0].parse().map_err(|_| bad("time"))?;
            rows.push(TraceRow {
                time_ns: secs_to_ns(t),
                from: f[1].parse().map_err(|_| bad("from"))?,
                to: f[2].parse().map_err(|_| bad("to"))?,
                kind: MsgKind::from_name(f[3]).ok_or_else(|| bad("kind"))?,
                bytes: f[4].parse().map_err(|_| bad("bytes"))?,
            });
        }
        Ok(Trace { rows })
    }

    pub fn count(&self, kind: MsgKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("liveness halt at {at_s:.3}s: {reason}")]
    LivenessHalt { at_s: f64, reason: String },
}

/// A participant driven by the simulator.
pub trait Actor {
    /// Handles one delivered message; `now` is when processing finishes.
    fn handle(&mut self, from: NodeId, msg: &PbftMessage, now: u64) -> Vec<Outbound>;

    /// Called when nothing is in flight.
    fn idle(&mut self, _now: u64) -> Vec<Outbound> {
        Vec::new()
    }
}

struct Pending {
    from: NodeId,
    msg: PbftMessage,
}

pub struct Simulator<A: Actor> {
    pub nodes: Vec<A>,
    replicas: usize,
    cfg: NetConfig,
    now: u64,
    start: u64,
    queue: BinaryHeap<Reverse<(u64, NodeId, u64)>>,
    pending: HashMap<u64, Pending>,
    counter: u64,
    latency: HashMap<(NodeId, NodeId), f64>,
    link_free: HashMap<(NodeId, NodeId), u64>,
    cpu_free: Vec<u64>,
    /// Total simulated processing time per node.
    pub cpu_busy: Vec<u64>,
    pub trace: Trace,
    pub record_trace: bool,
    pub deliveries: BTreeMap<MsgKind, u64>,
}

const MAX_IDLE_ROUNDS: usize = 16;

impl<A: Actor> Simulator<A> {
    /// `replicas` is how many leading nodes a `Dest::All` reaches.
    pub fn new(nodes: Vec<A>, replicas: usize, cfg: NetConfig) -> Self {
        let n = nodes.len();
        Simulator {
            nodes,
            replicas,
            cfg,
            now: 0,
            start: 0,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            counter: 0,
            latency: HashMap::new(),
            link_free: HashMap::new(),
            cpu_free: vec![0; n],
            cpu_busy: vec![0; n],
            trace: Trace::default(),
            record_trace: false,
            deliveries: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Latency of the directed link, drawn once per run from the seed.
    pub fn link(&mut self, from: NodeId, to: NodeId) -> LinkModel {
        if from == to {
            return LinkModel { latency_s: 0.0, bandwidth_bps: None };
        }
        let cfg = &self.cfg;
        let latency_s = *self.latency.entry((from, to)).or_insert_with(|| {
            if cfg.latency_max_s <= cfg.latency_min_s {
                return cfg.latency_min_s;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((from as u64) << 32 | to as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            rng.gen_range(cfg.latency_min_s..cfg.latency_max_s)
        });
        LinkModel { latency_s, bandwidth_bps: self.cfg.bandwidth_bps }
    }

    /// Schedules `msg` leaving `from` at time `at`. Messages on one link
    /// are serialized: each starts after the previous one finished.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: PbftMessage, at: u64) -> Result<(), SimError> {
        if to as usize >= self.nodes.len() {
            return Err(SimError::UnknownNode(to));
        }
        if from as usize >= self.nodes.len() {
            return Err(SimError::UnknownNode(from));
        }
        let size = msg.wire_size();
        let link = self.link(from, to);
        let deliver_at = if from == to {
            at
        } else {
            let free = self.link_free.entry((from, to)).or_insert(0);
            let begin = at.max(*free);
            let done = begin + secs_to_ns(link.serialization_s(size));
            *free = done;
            done + secs_to_ns(link.latency_s)
        };
        let id = self.counter;
        self.counter += 1;
        self.queue.push(Reverse((deliver_at, to, id)));
        self.pending.insert(id, Pending { from, msg });
        Ok(())
    }

    fn dispatch(&mut self, from: NodeId, out: Vec<Outbound>, at: u64) -> Result<(), SimError> {
        for o in out {
            match o.dest {
                Dest::To(to) => self.send(from, to, o.msg, at)?,
                Dest::All => {
                    for to in 0..self.replicas as NodeId {
                        self.send(from, to, o.msg.clone(), at)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Sends a node's outputs produced outside message handling.
    pub fn emit(&mut self, from: NodeId, out: Vec<Outbound>, at: u64) -> Result<(), SimError> {
        self.dispatch(from, out, at)
    }

    /// Processes events in order until `done` holds or nothing is left to do.
    pub fn run(&mut self, mut done: impl FnMut(&[A]) -> bool) -> Result<u64, SimError> {
        self.start = self.now;
        let deadline = self.start + secs_to_ns(self.cfg.watchdog_s);
        let mut idle_rounds = 0;
        loop {
            if done(&self.nodes) {
                return Ok(self.now);
            }
            let Some(Reverse((at, to, id))) = self.queue.pop() else {
                if idle_rounds == MAX_IDLE_ROUNDS {
                    return Err(self.halt("no progress after idle rounds"));
                }
                idle_rounds += 1;
                let now = self.now;
                for i in 0..self.nodes.len() {
                    let out = self.nodes[i].idle(now);
                    self.dispatch(i as NodeId, out, now)?;
                }
                if self.queue.is_empty() {
                    return Err(self.halt("stalled with nothing in flight"));
                }
                continue;
            };
            if at > deadline {
                self.now = deadline;
                return Err(self.halt("watchdog expired"));
            }
            self.now = at;
            let p = self.pending.remove(&id).expect("queued event has payload");
            let size = p.msg.wire_size();
            let v = to as usize;
            let begin = at.max(self.cpu_free[v]);
            let cost = secs_to_ns(self.cfg.cpu_per_msg_s + self.cfg.cpu_per_byte_s * size as f64);
            let finish = begin + cost;
            self.cpu_free[v] = finish;
            self.cpu_busy[v] += cost;
            *self.deliveries.entry(p.msg.kind).or_default() += 1;
            if self.record_trace {
                self.trace.rows.push(TraceRow { time_ns: at, from: p.from, to, kind: p.msg.kind, bytes: size });
            }
            let out = self.nodes[v].handle(p.from, &p.msg, finish);
            self.dispatch(to, out, finish)?;
        }
    }

    fn halt(&self, reason: &str) -> SimError {
        SimError::LivenessHalt { at_s: ns_to_secs(self.now - self.start), reason: reason.to_string() }
    }

    pub fn delivered(&self, kind: MsgKind) -> u64 {
        self.deliveries.get(&kind).copied().unwrap_or(0)
    }
}
