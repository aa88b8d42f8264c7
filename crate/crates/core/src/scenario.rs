//! Scenario definition and the tick-driven engine that runs agents against
//! a replicated ledger.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::agents::{Agent, AgentPolicy, Honesty, World};
use crate::crypto::{Digest32, KeyPair, PublicKey};
use crate::economics::{run_settlement, EconomicsParams, MockChain, MultisigSettlement};
use crate::ledger::{AdmitError, BatchReport, GlobalLedger, LedgerParams, Outcome, TxLog};
use crate::netsim::{ns_to_secs, Bandwidth, NetConfig, Trace};
use crate::pbft::ConsensusConfig;
use crate::records::{Batch, ModelBlob, OrderTemplate, Register, Role, RoleSet, Settled, Tokens, Tx};
use crate::sync::{replica_key, Cluster, Member};
use crate::tcp::TcpCluster;
use crate::workload::{vrf_model, Score, TaskSpec, ToyModel};
use crate::codec::Canonical;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    SimulatedNetwork,
    LocalhostTcp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SimulatedNetwork => "sim",
            Mode::LocalhostTcp => "localhost",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        match s {
            "sim" | "simulated" => Some(Mode::SimulatedNetwork),
            "localhost" | "tcp" => Some(Mode::LocalhostTcp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub name: String,
    pub policy: AgentPolicy,
    pub deposit: Tokens,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderSpec {
    pub name: String,
    /// Name of the client agent placing the order.
    pub client: String,
    pub reward: Tokens,
    pub t0: u64,
    pub dt_train: u64,
    pub dt_validate: u64,
    pub dt_challenge: u64,
    pub task: TaskSpec,
}

impl OrderSpec {
    pub fn template(&self) -> OrderTemplate {
        OrderTemplate {
            reward: self.reward,
            workload_type: "toy-regression".into(),
            t0: self.t0,
            dt_train: self.dt_train,
            dt_validate: self.dt_validate,
            dt_challenge: self.dt_challenge,
            link: self.task.to_link(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub consensus: ConsensusConfig,
    pub bandwidth: Bandwidth,
    pub net: NetConfig,
    pub agents: Vec<AgentSpec>,
    pub orders: Vec<OrderSpec>,
    pub econ: EconomicsParams,
    /// Faucet grant per agent at genesis.
    pub funds: Tokens,
    pub v_stake: Tokens,
    pub c_stake: Tokens,
    /// Orders a miner works on at once.
    pub max_orders: usize,
    /// Hard stop for the tick loop.
    pub duration_s: u64,
    pub port_base: u16,
}

impl Scenario {
    pub fn agents_with(&self, role: Role) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(move |a| a.policy.role == role)
    }

    pub fn count(&self, role: Role) -> usize {
        if role == Role::Aggregator {
            return self.consensus.n;
        }
        self.agents_with(role).count()
    }

    fn ledger_params(&self) -> LedgerParams {
        LedgerParams { econ: self.econ.clone(), ..Default::default() }
    }

    /// Faucet grants: every agent, and each aggregator enough to stake.
    pub fn genesis(&self) -> GlobalLedger {
        let mut faucet: Vec<(PublicKey, Tokens)> = self.agents.iter().map(|a| (agent_key(self.seed, &a.name).public_key(), self.funds)).collect();
        for i in 0..self.consensus.n {
            faucet.push((replica_key(i).public_key(), self.econ.min_stakes.aggregator));
        }
        GlobalLedger::genesis(self.ledger_params(), 0, &faucet)
    }
}

/// Agent identities are derived from the scenario seed and agent name.
pub fn agent_key(seed: u64, name: &str) -> KeyPair {
    let h = crate::crypto::hash_parts(&[b"pot/agent", &seed.to_be_bytes(), name.as_bytes()]);
    KeyPair::from_secret_bytes(h.as_bytes()).expect("32 bytes")
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("consensus halted at tick {tick}: {reason}")]
    LivenessHalt { tick: u64, reason: String },
    #[error("order {0} names an unknown client")]
    UnknownClient(String),
    #[error("localhost network: {0}")]
    Io(String),
}

/// Where batches are ordered and executed.
pub enum Backend {
    /// A single ledger, no consensus.
    Direct(Box<GlobalLedger>),
    /// Replicas on the simulated network.
    Simulated(Box<Cluster>),
    /// Replica threads over localhost TCP.
    Localhost(TcpCluster),
}

pub struct Executed {
    pub report: BatchReport,
    pub sync_seconds: f64,
    pub protocol_ms: f64,
}

impl Backend {
    pub fn for_scenario(s: &Scenario, consensus: bool) -> Result<Backend, ScenarioError> {
        let genesis = s.genesis();
        if !consensus {
            return Ok(Backend::Direct(Box::new(genesis)));
        }
        Ok(match s.mode {
            Mode::SimulatedNetwork => {
                let mut net = s.net.clone();
                net.seed = s.seed;
                Backend::Simulated(Box::new(Cluster::new(s.consensus.n, &BTreeMap::new(), net, &genesis)))
            }
            Mode::LocalhostTcp => {
                Backend::Localhost(TcpCluster::start(s.consensus.n, s.port_base, &genesis).map_err(|e| ScenarioError::Io(e.to_string()))?)
            }
        })
    }

    pub fn ledger(&self) -> &GlobalLedger {
        match self {
            Backend::Direct(l) => l,
            Backend::Simulated(c) => &c.replicas().next().expect("at least one replica").ledger,
            Backend::Localhost(c) => c.ledger(),
        }
    }

    pub fn execute(&mut self, batch: &Batch, tick: u64) -> Result<Executed, ScenarioError> {
        match self {
            Backend::Direct(l) => Ok(Executed { report: l.apply_batch(batch), sync_seconds: 0.0, protocol_ms: 0.0 }),
            Backend::Simulated(c) => {
                let n = c.cfg.n;
                let target = c.replicas().map(|r| r.reports.len()).min().unwrap_or(0) + 1;
                let start = c.sim.now();
                let busy_before = c.sim.cpu_busy[..n].to_vec();
                let d = batch.digest();
                let halt = |e: crate::netsim::SimError| ScenarioError::LivenessHalt { tick, reason: e.to_string() };
                c.propose(batch, start).map_err(halt)?;
                c.sim
                    .run(|nodes| {
                        nodes[..n].iter().all(|m| matches!(m, Member::Replica { executed_at, .. } if executed_at.len() >= target))
                            && matches!(&nodes[n], Member::Client { accepted_at, .. } if accepted_at.contains_key(&d))
                    })
                    .map_err(halt)?;
                let busiest = (0..n).map(|i| c.sim.cpu_busy[i] - busy_before[i]).max().unwrap_or(0);
                let report = c.replicas().next().and_then(|r| r.reports.last().cloned()).unwrap_or_default();
                Ok(Executed { report, sync_seconds: ns_to_secs(c.sim.now() - start), protocol_ms: ns_to_secs(busiest) * 1e3 })
            }
            Backend::Localhost(c) => {
                let (report, secs, busy) = c.execute(batch).map_err(|e| ScenarioError::LivenessHalt { tick, reason: e })?;
                Ok(Executed { report, sync_seconds: secs, protocol_ms: busy * 1e3 })
            }
        }
    }

    pub fn trace(&self) -> Option<&Trace> {
        match self {
            Backend::Simulated(c) if c.sim.record_trace => Some(&c.sim.trace),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub tick: u64,
    pub agent: String,
    pub kind: &'static str,
    pub error: AdmitError,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderResult {
    pub name: String,
    pub oid: Digest32,
    pub outcome: Option<Outcome>,
    /// Agent name of the winner.
    pub winner: Option<String>,
    /// Best test score among all revealed models, recomputed here.
    pub oracle_best: Option<Score>,
    pub delivered: bool,
    pub reported: bool,
    pub settled: bool,
}

#[derive(Debug)]
pub struct ScenarioResult {
    pub ticks: u64,
    pub orders: Vec<OrderResult>,
    pub rejections: Vec<Rejection>,
    pub challenges: usize,
    /// Challenges resolved against the validator.
    pub slashes: usize,
    pub log: TxLog,
    pub chain: MockChain,
    pub ledger: GlobalLedger,
    pub initial_total: Tokens,
    pub payout_total: Tokens,
    /// Balance plus stake per agent at genesis and at the end.
    pub wealth_before: BTreeMap<String, Tokens>,
    pub wealth_after: BTreeMap<String, Tokens>,
    pub sync_seconds: Vec<f64>,
    pub protocol_ms: f64,
    pub trace: Option<Trace>,
    /// Models each client received, keyed by order name.
    pub received: BTreeMap<String, ModelBlob>,
}

impl ScenarioResult {
    pub fn conserved(&self) -> bool {
        self.ledger.book.total() == self.initial_total
    }

    pub fn rejections_of(&self, agent: &str) -> impl Iterator<Item = &Rejection> {
        let agent = agent.to_string();
        self.rejections.iter().filter(move |r| r.agent == agent)
    }

    pub fn winners(&self) -> String {
        let w: Vec<&str> = self.orders.iter().map(|o| o.winner.as_deref().unwrap_or("-")).collect();
        if w.is_empty() {
            "-".into()
        } else {
            w.join("|")
        }
    }

    pub fn mean_sync(&self) -> f64 {
        if self.sync_seconds.is_empty() {
            return 0.0;
        }
        self.sync_seconds.iter().sum::<f64>() / self.sync_seconds.len() as f64
    }

    pub fn committed_txs(&self) -> usize {
        self.log.batches.iter().map(|b| b.txs.len()).sum()
    }
}

fn wealth(l: &GlobalLedger, pk: &PublicKey) -> Tokens {
    l.book.balance(pk) + l.book.stake(pk)
}

fn oracle_best(l: &GlobalLedger, oid: &Digest32) -> Option<Score> {
    let c = l.order(oid)?;
    c.m_list
        .iter()
        .filter_map(|e| e.claim.reveal.as_ref())
        .filter_map(|r| ToyModel::from_bytes(&r.model.payload).ok())
        .filter_map(|m| vrf_model(&m, &c.spec).ok())
        .max()
}

/// Runs a scenario to completion. With `consensus` false the batches go
/// straight to one ledger, which is much faster and gives the same state.
pub fn run_scenario(s: &Scenario, consensus: bool, record_trace: bool) -> Result<ScenarioResult, ScenarioError> {
    let mut backend = Backend::for_scenario(s, consensus)?;
    if let Backend::Simulated(c) = &mut backend {
        c.sim.record_trace = record_trace;
    }
    let mut agents: Vec<Agent> = s
        .agents
        .iter()
        .map(|a| {
            let mut ag = Agent::new(a.name.clone(), a.policy.clone(), agent_key(s.seed, &a.name), a.deposit);
            ag.v_stake = s.v_stake;
            ag.c_stake = s.c_stake;
            ag.max_orders = s.max_orders;
            ag
        })
        .collect();
    let mut order_names: BTreeMap<Digest32, String> = BTreeMap::new();
    for o in &s.orders {
        let client = agents
            .iter_mut()
            .find(|a| a.name == o.client && a.policy.role == Role::Client)
            .ok_or_else(|| ScenarioError::UnknownClient(o.name.clone()))?;
        client.client.schedule.push(o.template());
        if let Ok(signed) = o.template().sign(&client.key) {
            order_names.insert(signed.oid(), o.name.clone());
        }
    }
    let names: BTreeMap<PublicKey, String> = agents.iter().map(|a| (a.pk(), a.name.clone())).collect();
    let agg_keys: Vec<KeyPair> = (0..s.consensus.n).map(replica_key).collect();
    let name_of = |pk: &PublicKey| -> String {
        names.get(pk).cloned().unwrap_or_else(|| match agg_keys.iter().position(|k| &k.public_key() == pk) {
            Some(i) => format!("aggregator{i}"),
            None => pk.short(),
        })
    };

    let initial_total = backend.ledger().book.total();
    let wealth_before = agents.iter().map(|a| (a.name.clone(), wealth(backend.ledger(), &a.pk()))).collect();
    let mut log = TxLog::default();
    let mut chain = MockChain::default();
    let mut results: BTreeMap<Digest32, OrderResult> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut sync_seconds = Vec::new();
    let mut protocol_ms = 0.0;
    let mut payout_total = Tokens::ZERO;
    let mut settling: BTreeSet<Digest32> = BTreeSet::new();
    let (mut challenges, mut slashes) = (0, 0);
    let mut tick = 0;

    while tick <= s.duration_s {
        let ledger = backend.ledger();
        let idle = tick > 0 && ledger.table.is_empty() && agents.iter().all(|a| a.client.schedule.is_empty());
        if idle {
            break;
        }
        // Models of current winners, as their miners would serve them.
        let mut served: BTreeMap<(PublicKey, Digest32), ModelBlob> = BTreeMap::new();
        for c in ledger.table.values() {
            if let Some(Outcome::Winner { mid, miner, .. }) = &c.outcome {
                if let Some(blob) = agents.iter().find(|a| &a.pk() == miner).and_then(|a| a.serve(mid)) {
                    served.insert((*miner, *mid), blob);
                }
            }
        }
        let fetch = |pk: &PublicKey, mid: &Digest32| served.get(&(*pk, *mid)).cloned();
        let world = World { ledger, now: tick, fetch: &fetch };
        let mut txs: Vec<Tx> = Vec::new();
        if tick == 0 {
            let roles = RoleSet::of(&[Role::Aggregator]);
            for k in &agg_keys {
                txs.push(Tx::Register(Register::signed(k, roles, s.econ.min_stakes.aggregator, 0)));
            }
        }
        for a in agents.iter_mut() {
            txs.extend(a.tick(&world));
        }
        for oid in ledger.ready_for_settlement() {
            if settling.insert(oid) {
                settle_on_chain(ledger, &oid, s.econ.multisig_k, &agg_keys, &mut chain);
                txs.push(Tx::Settled(Settled::signed(&agg_keys[0], oid)));
            }
        }
        let senders: BTreeMap<Digest32, (PublicKey, &'static str)> = txs.iter().map(|t| (t.digest(), (t.sender(), t.kind()))).collect();
        let batch = Batch::new(tick, Some(s.consensus.n as u32), txs);
        let ex = backend.execute(&batch, tick)?;
        sync_seconds.push(ex.sync_seconds);
        protocol_ms += ex.protocol_ms;
        for (d, e) in &ex.report.rejected {
            if let Some((pk, kind)) = senders.get(d) {
                rejections.push(Rejection { tick, agent: name_of(pk), kind, error: e.clone() });
            }
        }
        let ledger = backend.ledger();
        let admitted: BTreeSet<&Digest32> = ex.report.admitted.iter().collect();
        for t in &batch.txs {
            let Tx::Challenge(ch) = t else { continue };
            if !admitted.contains(&t.digest()) {
                continue;
            }
            challenges += 1;
            let upheld = ledger.table.values().flat_map(|c| &c.m_list).flat_map(|e| &e.c_list).any(|r| r.challenge == *ch && r.upheld);
            if upheld {
                slashes += 1;
            }
        }
        for oid in &ex.report.finalized {
            let outcome = ledger.order(oid).and_then(|c| c.outcome.clone());
            let winner = match &outcome {
                Some(Outcome::Winner { miner, .. }) => Some(name_of(miner)),
                _ => None,
            };
            results.insert(
                *oid,
                OrderResult {
                    name: order_names.get(oid).cloned().unwrap_or_else(|| oid.short()),
                    oid: *oid,
                    outcome,
                    winner,
                    oracle_best: oracle_best(ledger, oid),
                    delivered: false,
                    reported: false,
                    settled: false,
                },
            );
        }
        for (oid, credits) in &ex.report.settled {
            payout_total += credits.iter().map(|(_, t)| *t).sum::<Tokens>();
            if let Some(r) = results.get_mut(oid) {
                r.settled = true;
            }
        }
        log.batches.push(batch);
        tick += 1;
    }

    let ledger = backend.ledger().clone();
    let mut received = BTreeMap::new();
    for a in &agents {
        for (oid, blob) in &a.client.received {
            if let Some(r) = results.get_mut(oid) {
                r.delivered = true;
                received.insert(r.name.clone(), blob.clone());
            }
        }
        for oid in &a.client.reported {
            if let Some(r) = results.get_mut(oid) {
                r.reported = true;
            }
        }
    }
    let mut orders: Vec<OrderResult> = results.into_values().collect();
    orders.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ScenarioResult {
        ticks: tick,
        orders,
        rejections,
        challenges,
        slashes,
        wealth_after: agents.iter().map(|a| (a.name.clone(), wealth(&ledger, &a.pk()))).collect(),
        wealth_before,
        ledger,
        log,
        chain,
        initial_total,
        payout_total,
        sync_seconds,
        protocol_ms,
        trace: backend.trace().cloned(),
        received,
    })
}

fn settle_on_chain(ledger: &GlobalLedger, oid: &Digest32, k: usize, keys: &[KeyPair], chain: &mut MockChain) {
    let Some(pending) = ledger.book.pending.get(oid) else { return };
    let aggs = ledger.aggregators();
    let (credits, _) = pending.credits(&aggs);
    let Ok(mut ms) = MultisigSettlement::propose(k.min(aggs.len()).max(1), aggs.clone(), *oid, credits) else { return };
    let sigs: Vec<_> = keys.iter().filter(|kp| aggs.contains(&kp.public_key())).take(ms.k).map(|kp| ms.sign(kp)).collect();
    let _ = run_settlement(&mut ms, &sigs, chain, &ledger.params.econ.gas);
}

/// A compact all-honest scenario, useful as a base for tests and examples.
pub fn basic_scenario(seed: u64) -> Scenario {
    let mut agents = vec![AgentSpec {
        name: "client0".into(),
        policy: AgentPolicy { role: Role::Client, honesty: Honesty::Honest, compute_budget: 0, rng_seed: seed },
        deposit: Tokens::ZERO,
    }];
    let roles = [(Role::Miner, 2, 100), (Role::Validator, 3, 100), (Role::Verifier, 1, 10)];
    for (role, count, deposit) in roles {
        for i in 0..count {
            agents.push(AgentSpec {
                name: format!("{}{i}", role.name()),
                policy: AgentPolicy { role, honesty: Honesty::Honest, compute_budget: 2_000, rng_seed: seed.wrapping_add(agents.len() as u64) },
                deposit: Tokens::whole(deposit),
            });
        }
    }
    Scenario {
        name: "basic".into(),
        seed,
        mode: Mode::SimulatedNetwork,
        consensus: ConsensusConfig::new(4),
        bandwidth: Bandwidth::Fast,
        net: NetConfig::wan(Bandwidth::Fast, seed),
        agents,
        orders: vec![OrderSpec {
            name: "order0".into(),
            client: "client0".into(),
            reward: Tokens::whole(100),
            t0: 1,
            dt_train: 10,
            dt_validate: 5,
            dt_challenge: 5,
            task: TaskSpec::new(32, seed, seed ^ 0x5eed),
        }],
        econ: EconomicsParams::default(),
        funds: Tokens::whole(1_000),
        v_stake: Tokens::whole(10),
        c_stake: Tokens::whole(5),
        max_orders: 1,
        duration_s: 120,
        port_base: 7400,
    }
}

/// [`basic_scenario`] plus one agent named `adversary` with the given
/// behaviour. A silent miner gets a larger budget so it actually wins.
pub fn with_adversary(seed: u64, honesty: Honesty) -> Scenario {
    let mut s = basic_scenario(seed);
    let role = honesty.role().unwrap_or(Role::Miner);
    let budget = if honesty == Honesty::SilentMiner { 20_000 } else { 2_000 };
    let deposit = if role == Role::Verifier { 10 } else { 100 };
    s.agents.push(AgentSpec {
        name: "adversary".into(),
        policy: AgentPolicy { role, honesty, compute_budget: budget, rng_seed: seed ^ 0xbad },
        deposit: Tokens::whole(deposit),
    });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honest_run_settles_best_model() {
        let r = run_scenario(&basic_scenario(3), false, false).unwrap();
        assert_eq!(r.orders.len(), 1);
        let o = &r.orders[0];
        let Some(Outcome::Winner { score, .. }) = &o.outcome else { panic!("no winner: {:?}", r.rejections) };
        assert_eq!(Some(*score), o.oracle_best);
        assert!(o.delivered && o.settled && !o.reported);
        assert_eq!((r.challenges, r.slashes), (0, 0));
        assert!(r.rejections.is_empty(), "{:?}", r.rejections);
        assert!(r.conserved());
        assert!(!r.chain.receipts.is_empty());
        assert!(r.ledger.table.is_empty());
    }

    #[test]
    fn consensus_and_direct_reach_the_same_state() {
        let s = basic_scenario(4);
        let a = run_scenario(&s, false, false).unwrap();
        let b = run_scenario(&s, true, false).unwrap();
        assert_eq!(a.ledger.state_root(), b.ledger.state_root());
        assert_eq!(a.log, b.log);
        assert!(b.mean_sync() > 0.0);
    }

    #[test]
    fn same_seed_same_log() {
        let s = basic_scenario(9);
        let a = run_scenario(&s, false, false).unwrap();
        let b = run_scenario(&s, false, false).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.chain.receipts_csv(), b.chain.receipts_csv());
    }
}
