//! Behavioural agents. Each tick an agent reads a ledger snapshot and
//! returns the transactions it wants included in the next batch.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::Canonical;
use crate::crypto::{hash_parts, Digest32, KeyPair, PublicKey};
use crate::ledger::{GlobalLedger, Outcome, Stage};
use crate::protocol::{phase_of, pot_validate, pot_verify, score_blob, Phase};
use crate::records::{
    Challenge, Claim, Delivered, ModelBlob, Order, OrderTemplate, Register, Report, RevealTx, Role, RoleSet, Tokens, Tx,
    Validation, Vote,
};
use crate::workload::{train_score, train_step, Score, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Honesty {
    Honest,
    /// Copies a revealed model and tries to claim it.
    Thief,
    /// Reports every score one unit off.
    LyingValidator,
    /// Wins but never hands the model to the client.
    SilentMiner,
    /// Trains honestly but only commits once training has closed.
    LateClaimant,
    /// Challenges a correct validation.
    FalseChallenger,
}

impl Honesty {
    pub const ALL: [Honesty; 6] = [
        Honesty::Honest,
        Honesty::Thief,
        Honesty::LyingValidator,
        Honesty::SilentMiner,
        Honesty::LateClaimant,
        Honesty::FalseChallenger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Honesty::Honest => "honest",
            Honesty::Thief => "thief",
            Honesty::LyingValidator => "lying-validator",
            Honesty::SilentMiner => "silent-miner",
            Honesty::LateClaimant => "late-claimant",
            Honesty::FalseChallenger => "false-challenger",
        }
    }

    pub fn from_name(s: &str) -> Option<Honesty> {
        Honesty::ALL.into_iter().find(|h| h.name() == s)
    }

    /// The role this behaviour belongs to, if it is role specific.
    pub fn role(self) -> Option<Role> {
        match self {
            Honesty::Honest => None,
            Honesty::Thief | Honesty::SilentMiner | Honesty::LateClaimant => Some(Role::Miner),
            Honesty::LyingValidator => Some(Role::Validator),
            Honesty::FalseChallenger => Some(Role::Verifier),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentPolicy {
    pub role: Role,
    pub honesty: Honesty,
    /// Training steps per tick (miners).
    pub compute_budget: u64,
    pub rng_seed: u64,
}

/// Per-tick view handed to agents.
pub struct World<'a> {
    pub ledger: &'a GlobalLedger,
    pub now: u64,
    /// Off-ledger model retrieval from a miner.
    pub fetch: &'a dyn Fn(&PublicKey, &Digest32) -> Option<ModelBlob>,
}

#[derive(Clone, Debug, Default)]
struct Work {
    model: Option<ToyModel>,
    best: Option<Score>,
    /// Every committed model by its commitment signature.
    committed: BTreeMap<Vec<u8>, ToyModel>,
    revealed: bool,
    late_sent: bool,
    theft_done: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ClientBook {
    pub schedule: Vec<OrderTemplate>,
    pub placed: Vec<Order>,
    /// Models fetched and checked against the winning MID.
    pub received: BTreeMap<Digest32, ModelBlob>,
    pub reported: BTreeSet<Digest32>,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub name: String,
    pub policy: AgentPolicy,
    pub key: KeyPair,
    pub deposit: Tokens,
    pub v_stake: Tokens,
    pub c_stake: Tokens,
    /// Orders a miner works on at once.
    pub max_orders: usize,
    pub client: ClientBook,
    work: BTreeMap<Digest32, Work>,
    done: BTreeSet<(Digest32, Digest32)>,
    voted: BTreeSet<Digest32>,
    register_sent: bool,
    false_challenge_sent: bool,
}

impl Agent {
    pub fn new(name: impl Into<String>, policy: AgentPolicy, key: KeyPair, deposit: Tokens) -> Self {
        Agent {
            name: name.into(),
            policy,
            key,
            deposit,
            v_stake: Tokens::whole(10),
            c_stake: Tokens::whole(5),
            max_orders: 1,
            client: ClientBook::default(),
            work: BTreeMap::new(),
            done: BTreeSet::new(),
            voted: BTreeSet::new(),
            register_sent: false,
            false_challenge_sent: false,
        }
    }

    pub fn pk(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn is_adversary(&self) -> bool {
        self.policy.honesty != Honesty::Honest
    }

    /// Serves a stored model, unless this miner withholds models.
    pub fn serve(&self, mid: &Digest32) -> Option<ModelBlob> {
        if self.policy.role != Role::Miner || self.policy.honesty == Honesty::SilentMiner {
            return None;
        }
        self.work
            .values()
            .flat_map(|w| w.committed.values())
            .map(|m| ModelBlob::new(m.to_bytes()))
            .find(|b| &b.mid == mid)
    }

    pub fn tick(&mut self, w: &World<'_>) -> Vec<Tx> {
        let mut out = Vec::new();
        if self.policy.role != Role::Client && !self.register_sent {
            self.register_sent = true;
            let roles = RoleSet::of(&[self.policy.role]);
            out.push(Tx::Register(Register::signed(&self.key, roles, self.deposit, 0)));
            return out;
        }
        match self.policy.role {
            Role::Client => self.client_tick(w, &mut out),
            Role::Miner => self.miner_tick(w, &mut out),
            Role::Validator => self.validator_tick(w, &mut out),
            Role::Verifier => self.verifier_tick(w, &mut out),
            Role::Aggregator => {}
        }
        if matches!(self.policy.role, Role::Miner | Role::Validator | Role::Verifier) {
            self.vote_tick(w, &mut out);
        }
        out
    }

    fn client_tick(&mut self, w: &World<'_>, out: &mut Vec<Tx>) {
        let due: Vec<OrderTemplate> = self.client.schedule.iter().filter(|t| t.t0 <= w.now).cloned().collect();
        self.client.schedule.retain(|t| t.t0 > w.now);
        for t in due {
            if let Ok(o) = t.sign(&self.key) {
                out.push(Tx::Order(o.clone()));
                self.client.placed.push(o);
            }
        }
        for o in &self.client.placed {
            let oid = o.oid();
            let Some(cycle) = w.ledger.order(&oid) else { continue };
            let (Stage::AwaitingDelivery { .. }, Some(Outcome::Winner { mid, miner, .. })) = (cycle.stage, &cycle.outcome) else {
                continue;
            };
            if self.client.received.contains_key(&oid) || self.client.reported.contains(&oid) {
                continue;
            }
            match (w.fetch)(miner, mid).filter(|b| ModelBlob::new(b.payload.clone()).mid == *mid) {
                Some(blob) => {
                    self.client.received.insert(oid, blob);
                    out.push(Tx::Delivered(Delivered::signed(&self.key, oid)));
                }
                None => {
                    self.client.reported.insert(oid);
                    out.push(Tx::Report(Report::signed(&self.key, oid)));
                }
            }
        }
    }

    /// Open orders in training, best reward per training second first.
    fn chosen_orders(&self, w: &World<'_>) -> Vec<Digest32> {
        let mut open: Vec<(&Digest32, u128, u64)> = w
            .ledger
            .table
            .iter()
            .filter(|(_, c)| c.windows().commit_open(w.now) || self.work.contains_key(&c.order.oid()))
            .map(|(oid, c)| (oid, c.order.reward.0 as u128 * 1_000_000 / c.order.dt_train.max(1) as u128, c.order.t0))
            .collect();
        open.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
        let mut picked: Vec<Digest32> = open.iter().filter(|(o, _, _)| self.work.contains_key(o)).map(|(o, _, _)| **o).collect();
        for (oid, _, _) in open {
            if picked.len() >= self.max_orders {
                break;
            }
            if !picked.contains(oid) {
                picked.push(*oid);
            }
        }
        picked
    }

    fn miner_tick(&mut self, w: &World<'_>, out: &mut Vec<Tx>) {
        for oid in self.chosen_orders(w) {
            let Some(cycle) = w.ledger.order(&oid) else {
                self.work.remove(&oid);
                continue;
            };
            let windows = cycle.windows();
            let spec = cycle.spec;
            let seed = tick_seed(self.policy.rng_seed, &oid, w.now);
            let work = self.work.entry(oid).or_default();
            let honesty = self.policy.honesty;

            if windows.commit_open(w.now) || (honesty == Honesty::LateClaimant && !work.late_sent) {
                if honesty == Honesty::Thief {
                    // A placeholder commitment, to try revealing a stolen model later.
                    if work.committed.is_empty() && windows.commit_open(w.now) {
                        let m = ToyModel::initial(spec.dimension);
                        let claim = Claim::commit(oid, &m.to_bytes(), &self.key, w.now);
                        work.committed.insert(claim.model_sig.0.to_vec(), m);
                        out.push(Tx::Commit(claim));
                    }
                } else if windows.commit_open(w.now) {
                    let data = spec.training_data();
                    let current = work.model.clone().unwrap_or_else(|| ToyModel::initial(spec.dimension));
                    let next = train_step(&current, &data, seed, self.policy.compute_budget);
                    let s = train_score(&next, &data).unwrap_or(Score(0));
                    work.model = Some(next.clone());
                    if work.best.is_none_or(|b| s > b) && honesty != Honesty::LateClaimant {
                        work.best = Some(s);
                        let claim = Claim::commit(oid, &next.to_bytes(), &self.key, w.now);
                        work.committed.insert(claim.model_sig.0.to_vec(), next);
                        out.push(Tx::Commit(claim));
                    }
                } else if let Some(m) = work.model.clone() {
                    // Training closed: the late claimant commits only now.
                    work.late_sent = true;
                    let claim = Claim::commit(oid, &m.to_bytes(), &self.key, w.now);
                    work.committed.insert(claim.model_sig.0.to_vec(), m);
                    out.push(Tx::Commit(claim));
                }
                continue;
            }

            if !windows.reveal_open(w.now) {
                continue;
            }
            if honesty == Honesty::Thief {
                if work.theft_done {
                    continue;
                }
                let mine = self.key.public_key();
                let loot = cycle
                    .m_list
                    .iter()
                    .filter(|e| e.claim.miner_pk != mine)
                    .filter_map(|e| e.claim.reveal.as_ref())
                    .filter_map(|r| score_blob(&r.model, &spec).ok().map(|s| (s, r.model.clone())))
                    .max_by(|a, b| a.0.cmp(&b.0).then(b.1.mid.cmp(&a.1.mid)));
                if let Some((_, blob)) = loot {
                    work.theft_done = true;
                    out.push(Tx::Commit(Claim::commit(oid, &blob.payload, &self.key, w.now)));
                    out.push(Tx::Reveal(RevealTx { oid, miner_pk: mine, model: blob }));
                }
                continue;
            }
            if work.revealed {
                continue;
            }
            let Some(entry) = cycle.entry(&self.key.public_key()) else { continue };
            if entry.claim.is_revealed() {
                work.revealed = true;
                continue;
            }
            if let Some(m) = work.committed.get(entry.claim.model_sig.0.as_slice()) {
                work.revealed = true;
                out.push(Tx::Reveal(RevealTx { oid, miner_pk: self.key.public_key(), model: ModelBlob::new(m.to_bytes()) }));
            }
        }
    }

    fn validator_tick(&mut self, w: &World<'_>, out: &mut Vec<Tx>) {
        for (oid, cycle) in &w.ledger.table {
            let windows = cycle.windows();
            if !windows.validate_open(w.now) {
                continue;
            }
            for e in &cycle.m_list {
                let Some(mid) = e.mid() else { continue };
                if !self.done.insert((*oid, mid)) {
                    continue;
                }
                let Ok(v) = pot_validate(&e.claim, &cycle.spec, &self.key, self.v_stake, w.ledger, &windows, w.now) else {
                    continue;
                };
                let v = if self.policy.honesty == Honesty::LyingValidator {
                    let lie = if v.score.0 >= crate::workload::SCORE_SCALE { v.score.0 - 1 } else { v.score.0 + 1 };
                    Validation::signed(&self.key, *oid, mid, Score(lie), self.v_stake, w.now, w.now)
                } else {
                    v
                };
                out.push(Tx::Validation(v));
            }
        }
    }

    fn verifier_tick(&mut self, w: &World<'_>, out: &mut Vec<Tx>) {
        for (oid, cycle) in &w.ledger.table {
            if phase_of(&cycle.windows(), w.now) == Phase::Training {
                continue;
            }
            let windows = cycle.windows();
            for e in &cycle.m_list {
                let Some(reveal) = &e.claim.reveal else { continue };
                for v in &e.v_list {
                    if !windows.challenge_open(v.message_time, w.now) || !self.done.insert((*oid, v.vid())) {
                        continue;
                    }
                    let Ok(res) = pot_verify(v, &cycle.spec, Some(&reveal.model), &self.key, self.c_stake, &windows, w.now) else {
                        continue;
                    };
                    match self.policy.honesty {
                        Honesty::FalseChallenger => {
                            if res.correct && !self.false_challenge_sent {
                                self.false_challenge_sent = true;
                                out.push(Tx::Challenge(Challenge::signed(&self.key, v.vid(), self.c_stake, w.now, w.now)));
                            }
                        }
                        _ => out.extend(res.challenge.map(Tx::Challenge)),
                    }
                }
            }
        }
    }

    fn vote_tick(&mut self, w: &World<'_>, out: &mut Vec<Tx>) {
        for (oid, cycle) in &w.ledger.table {
            let (Some(report), Some(Outcome::Winner { mid, miner, .. })) = (&cycle.report, &cycle.outcome) else { continue };
            if report.upheld || miner == &self.pk() || !self.voted.insert(*oid) {
                continue;
            }
            let support = (w.fetch)(miner, mid).is_none();
            out.push(Tx::Vote(Vote::signed(&self.key, *oid, support)));
        }
    }
}

fn tick_seed(seed: u64, oid: &Digest32, now: u64) -> u64 {
    let h = hash_parts(&[&seed.to_be_bytes(), oid.as_bytes(), &now.to_be_bytes()]);
    u64::from_be_bytes(h.0[..8].try_into().expect("8 bytes"))
}
