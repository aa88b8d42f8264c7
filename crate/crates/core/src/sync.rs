//! Ledger synchronization runs: a PBFT cluster of aggregators plus one
//! submitting client on the simulated network.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::codec::Canonical;
use crate::crypto::{hash, Digest32, KeyPair};
use crate::ledger::GlobalLedger;
use crate::netsim::{ns_to_secs, Actor, NetConfig, SimError, Simulator, Trace};
use crate::pbft::{
    ConsensusConfig, Directory, Fault, FaultFilter, MsgKind, NodeId, Outbound, PbftMessage, Replica, ReplyCollector,
    SigCache,
};
use crate::records::{Batch, Register, Role, RoleSet, Tokens, Tx, Validation};
use crate::workload::Score;

pub enum Member {
    Replica {
        replica: Box<Replica>,
        fault: Option<FaultFilter>,
        executed_at: Vec<u64>,
    },
    Client {
        collector: ReplyCollector,
        accepted_at: BTreeMap<Digest32, u64>,
    },
}

impl Member {
    pub fn replica(&self) -> Option<&Replica> {
        match self {
            Member::Replica { replica, .. } => Some(replica),
            Member::Client { .. } => None,
        }
    }

    pub fn is_honest_replica(&self) -> bool {
        matches!(self, Member::Replica { fault: None, .. })
    }
}

impl Actor for Member {
    fn handle(&mut self, _from: NodeId, msg: &PbftMessage, now: u64) -> Vec<Outbound> {
        match self {
            Member::Replica { replica, fault, executed_at } => {
                let step = replica.step(msg);
                executed_at.extend(step.committed.iter().map(|_| now));
                match fault {
                    Some(f) => f.apply(step.out),
                    None => step.out,
                }
            }
            Member::Client { collector, accepted_at } => {
                if let Some(d) = collector.on_reply(msg) {
                    accepted_at.entry(d).or_insert(now);
                }
                Vec::new()
            }
        }
    }

    fn idle(&mut self, _now: u64) -> Vec<Outbound> {
        match self {
            Member::Replica { replica, fault, .. } => {
                let out = replica.on_idle();
                match fault {
                    Some(f) => f.apply(out),
                    None => out,
                }
            }
            Member::Client { .. } => Vec::new(),
        }
    }
}

pub fn replica_key(i: usize) -> KeyPair {
    KeyPair::from_seed(0x0a66_0000 + i as u64)
}

pub fn client_key(i: usize) -> KeyPair {
    KeyPair::from_seed(0x0c11_0000 + i as u64)
}

/// `n` replicas (ids `0..n`) followed by one client (id `n`).
pub struct Cluster {
    pub sim: Simulator<Member>,
    pub cfg: ConsensusConfig,
    pub client: NodeId,
    client_key: KeyPair,
}

impl Cluster {
    pub fn new(n: usize, faults: &BTreeMap<NodeId, Fault>, net: NetConfig, genesis: &GlobalLedger) -> Cluster {
        let cfg = ConsensusConfig::new(n);
        let mut keys: Vec<KeyPair> = (0..n).map(replica_key).collect();
        keys.push(client_key(0));
        let dir = Arc::new(Directory { keys: keys.iter().map(|k| k.public_key()).collect() });
        let cache = Arc::new(SigCache::default());
        let mut members: Vec<Member> = (0..n)
            .map(|i| Member::Replica {
                replica: Box::new(Replica::new(i as NodeId, cfg, keys[i].clone(), dir.clone(), cache.clone(), genesis.clone())),
                fault: faults.get(&(i as NodeId)).map(|f| FaultFilter::new(*f, keys[i].clone(), n)),
                executed_at: Vec::new(),
            })
            .collect();
        members.push(Member::Client { collector: ReplyCollector::new(cfg, dir, cache), accepted_at: BTreeMap::new() });
        Cluster { sim: Simulator::new(members, n, net), cfg, client: n as NodeId, client_key: keys[n].clone() }
    }

    /// Client sends a signed request for `batch` to replica `to`.
    pub fn submit(&mut self, batch: &Batch, to: NodeId, at: u64) -> Result<(), SimError> {
        let payload = batch.to_bytes();
        let msg = PbftMessage::signed(&self.client_key, MsgKind::Request, 0, 0, hash(&payload), Some(payload), self.client);
        self.sim.send(self.client, to, msg, at)
    }

    /// The primary proposes a batch it already holds.
    pub fn propose(&mut self, batch: &Batch, at: u64) -> Result<(), SimError> {
        let primary = self.cfg.primary;
        let out = match &mut self.sim.nodes[primary] {
            Member::Replica { replica, fault, .. } => {
                let out = replica.propose(batch).out;
                match fault {
                    Some(f) => f.apply(out),
                    None => out,
                }
            }
            Member::Client { .. } => Vec::new(),
        };
        self.sim.emit(primary as NodeId, out, at)
    }

    pub fn replicas(&self) -> impl Iterator<Item = &Replica> {
        self.sim.nodes.iter().filter_map(Member::replica)
    }

    pub fn honest(&self) -> impl Iterator<Item = &Replica> {
        self.sim.nodes.iter().filter(|m| m.is_honest_replica()).filter_map(Member::replica)
    }

    pub fn accepted(&self) -> &BTreeMap<Digest32, u64> {
        match &self.sim.nodes[self.client as usize] {
            Member::Client { accepted_at, .. } => accepted_at,
            Member::Replica { .. } => unreachable!("client slot holds a client"),
        }
    }

    /// Honest replicas hold equal committed sequences and state roots.
    pub fn honest_agree(&self) -> bool {
        let mut it = self.honest();
        let Some(first) = it.next() else { return true };
        let root = first.ledger.state_root();
        it.all(|r| r.committed == first.committed && r.ledger.state_root() == root)
    }

    /// Every honest committed sequence is a prefix of the longest one.
    pub fn honest_prefix_consistent(&self) -> bool {
        let longest = self.honest().map(|r| &r.committed).max_by_key(|c| c.len()).cloned().unwrap_or_default();
        self.honest().all(|r| longest.starts_with(&r.committed))
    }
}

// ---------------------------------------------------------------- sync-time experiment

/// Synthetic validation transactions from an unregistered signer. They are
/// close to real validation size and rejected identically everywhere.
pub fn synthetic_batch(count: usize, seed: u64, timestamp: u64, origin: Option<NodeId>) -> Batch {
    let key = KeyPair::from_seed(seed ^ 0x5e1f_7e57);
    let oid = hash(&seed.to_be_bytes());
    let txs = (0..count as u64)
        .map(|i| {
            let mid = hash(&[seed.to_be_bytes(), i.to_be_bytes()].concat());
            Tx::Validation(Validation::signed(&key, oid, mid, Score(i % 1_000_000), Tokens::whole(1), timestamp, timestamp))
        })
        .collect();
    Batch::new(timestamp, origin, txs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncSpec {
    pub nodes: usize,
    pub batch_tx: usize,
    pub net: NetConfig,
    pub record_trace: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyncStatus {
    Completed,
    LivenessHalt(String),
}

impl SyncStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SyncStatus::Completed => "ok",
            SyncStatus::LivenessHalt(_) => "liveness-halt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncReport {
    pub status: SyncStatus,
    /// From proposal until every replica executed and the client accepted.
    pub sync_seconds: f64,
    /// Simulated processing time of the busiest replica.
    pub protocol_ms: f64,
    pub batch_bytes: usize,
    pub deliveries: BTreeMap<MsgKind, u64>,
    pub trace: Option<Trace>,
    pub agreement: bool,
}

/// One batch proposed by the primary, carried through pre-prepare, prepare,
/// commit and reply.
pub fn measure_sync(spec: &SyncSpec) -> SyncReport {
    let batch = synthetic_batch(spec.batch_tx, spec.net.seed, 1, Some(spec.nodes as NodeId));
    run_batch(spec.nodes, &batch, spec.net.clone(), spec.record_trace)
}

/// Like [`measure_sync`] for a given batch, whose origin should be the
/// client id `nodes`.
pub fn measure_batch(nodes: usize, batch: &Batch, net: NetConfig) -> SyncReport {
    run_batch(nodes, batch, net, false)
}

fn run_batch(n: usize, batch: &Batch, net: NetConfig, record_trace: bool) -> SyncReport {
    let genesis = GlobalLedger::new(Default::default());
    let mut c = Cluster::new(n, &BTreeMap::new(), net, &genesis);
    c.sim.record_trace = record_trace;
    let batch_bytes = batch.to_bytes().len();
    let d = batch.digest();
    let res = c.propose(batch, 0).and_then(|_| {
        c.sim.run(|nodes| {
            let all_exec = nodes[..n].iter().all(|m| matches!(m, Member::Replica { executed_at, .. } if !executed_at.is_empty()));
            let accepted = matches!(&nodes[n], Member::Client { accepted_at, .. } if accepted_at.contains_key(&d));
            all_exec && accepted
        })
    });
    let status = match res {
        Ok(_) => SyncStatus::Completed,
        Err(e) => SyncStatus::LivenessHalt(e.to_string()),
    };
    let busiest = c.sim.cpu_busy[..n].iter().copied().max().unwrap_or(0);
    SyncReport {
        status,
        sync_seconds: ns_to_secs(c.sim.now()),
        protocol_ms: ns_to_secs(busiest) * 1e3,
        batch_bytes,
        deliveries: c.sim.deliveries.clone(),
        trace: record_trace.then(|| c.sim.trace.clone()),
        agreement: c.honest_agree(),
    }
}

// ---------------------------------------------------------------- fault injection

/// Small genesis with funded accounts so test batches change state.
pub fn funded_genesis(accounts: usize) -> GlobalLedger {
    let faucet: Vec<_> = (0..accounts).map(|i| (client_key(100 + i).public_key(), Tokens::whole(10_000))).collect();
    GlobalLedger::genesis(Default::default(), 0, &faucet)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultRun {
    pub agreement: bool,
    pub prefix_consistent: bool,
    pub committed: usize,
    pub halted: Option<String>,
}

/// Two client batches, one sent to the primary and one to a backup, with
/// an optional faulty replica.
pub fn run_with_fault(n: usize, fault: Option<(NodeId, Fault)>, net: NetConfig) -> FaultRun {
    let genesis = funded_genesis(2);
    let faults: BTreeMap<NodeId, Fault> = fault.into_iter().collect();
    let mut c = Cluster::new(n, &faults, net.clone(), &genesis);
    let client = c.client;
    let mk = |i: usize, t: u64| {
        let k = client_key(100 + i);
        let roles = RoleSet::of(&[Role::Validator]);
        Batch::new(t, Some(client), vec![Tx::Register(Register::signed(&k, roles, Tokens::whole(100 + i as u64), net.seed))])
    };
    let backup = (1 % n) as NodeId;
    let res = c.submit(&mk(0, 1), 0, 0).and_then(|_| c.submit(&mk(1, 2), backup, 0)).and_then(|_| c.sim.run(|_| false));
    // Running to quiescence always ends in a stall; it only counts as a
    // halt when some honest replica is missing a batch.
    let complete = c.honest().all(|r| r.committed.len() == 2);
    let halted = match res {
        Err(e) if !complete => Some(e.to_string()),
        _ => None,
    };
    FaultRun {
        agreement: c.honest_agree(),
        prefix_consistent: c.honest_prefix_consistent(),
        committed: c.honest().map(|r| r.committed.len()).max().unwrap_or(0),
        halted,
    }
}
