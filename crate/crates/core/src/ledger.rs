//! The replicated global ledger: transaction pool, per-order record table,
//! model store, node registry and token book.
//!
//! All mutation goes through [`GlobalLedger::apply_batch`], which admits each
//! transaction against the batch timestamp and then runs the deterministic
//! [`GlobalLedger::refresh`] step (phase advance, finalization, delivery).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::codec::{decode_seq, encode_seq, Canonical, CodecError, Reader, Writer};
use crate::crypto::{hash, Digest32, PublicKey};
use crate::economics::{EconError, EconomicsParams, PendingPayout, StakeBook};
use crate::protocol::{
    finalize_candidates, phase_of, score_blob, Candidate, Phase, PhaseWindows, Registry, ScoredVote,
};
use crate::records::{
    Batch, Challenge, Claim, Delivered, ModelBlob, Order, Register, Report, Reveal, RevealTx, Role, RoleSet, Settled,
    Tokens, Tx, Unregister, Validation, Vote,
};
use crate::workload::{Score, TaskSpec, ToyModel};

#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone)]
pub enum AdmitError {
    #[error("bad signature")]
    BadSignature,
    #[error("unknown sender")]
    UnknownSender,
    #[error("insufficient stake")]
    InsufficientStake,
    #[error("duplicate")]
    Duplicate,
    #[error("time window closed")]
    WindowClosed,
    #[error("too early")]
    TooEarly,
    #[error("revealed model does not match commitment")]
    SignatureMismatch,
    #[error("timestamp outside the accepted skew")]
    StaleTimestamp,
    #[error("unknown order")]
    UnknownOrder,
    #[error("unknown claim")]
    UnknownClaim,
    #[error("unknown model")]
    UnknownModel,
    #[error("unknown validation")]
    UnknownValidation,
    #[error("not allowed in the current stage")]
    WrongStage,
    #[error("not authorized")]
    NotAuthorized,
    #[error("stake in use by open orders")]
    StakeInUse,
    #[error("invalid record: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Econ(#[from] EconError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerParams {
    pub econ: EconomicsParams,
    /// Largest accepted gap between a signed timestamp and the ledger clock.
    pub max_skew_s: u64,
}

impl Default for LedgerParams {
    fn default() -> Self {
        LedgerParams { econ: EconomicsParams::default(), max_skew_s: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeInfo {
    pub pk: PublicKey,
    pub roles: RoleSet,
    pub reputation: i64,
    pub registered: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChallengeRecord {
    pub challenge: Challenge,
    /// The recomputed score disagreed with the challenged validation.
    pub upheld: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelEntry {
    pub claim: Claim,
    pub v_list: Vec<Validation>,
    pub c_list: Vec<ChallengeRecord>,
}

impl ModelEntry {
    pub fn mid(&self) -> Option<Digest32> {
        self.claim.mid()
    }

    /// Validations without an upheld challenge.
    pub fn surviving(&self) -> impl Iterator<Item = &Validation> {
        let struck: BTreeSet<Digest32> = self.c_list.iter().filter(|c| c.upheld).map(|c| c.challenge.vid).collect();
        self.v_list.iter().filter(move |v| !struck.contains(&v.vid()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Winner { mid: Digest32, miner: PublicKey, score: Score, validators: Vec<PublicKey> },
    Refunded,
}

/// Post-finalization progress of an order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Open,
    /// Waiting for the client to confirm it fetched the model.
    AwaitingDelivery { deadline: u64 },
    /// Payouts fixed; waiting for on-chain settlement.
    Ready,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReportState {
    pub votes: BTreeMap<PublicKey, bool>,
    pub upheld: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OrderCycleData {
    pub order: Order,
    pub spec: TaskSpec,
    pub phase: Phase,
    pub m_list: Vec<ModelEntry>,
    pub outcome: Option<Outcome>,
    pub stage: Stage,
    pub report: Option<ReportState>,
}

impl OrderCycleData {
    pub fn windows(&self) -> PhaseWindows {
        PhaseWindows::of(&self.order)
    }

    pub fn entry(&self, miner: &PublicKey) -> Option<&ModelEntry> {
        self.m_list.iter().find(|e| &e.claim.miner_pk == miner)
    }

    pub fn model_entries(&self, mid: &Digest32) -> impl Iterator<Item = &ModelEntry> {
        let mid = *mid;
        self.m_list.iter().filter(move |e| e.mid() == Some(mid))
    }

    pub fn find_validation(&self, vid: &Digest32) -> Option<&Validation> {
        self.m_list.iter().flat_map(|e| e.v_list.iter()).find(|v| &v.vid() == vid)
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.m_list
            .iter()
            .filter_map(|e| {
                let mid = e.mid()?;
                Some(Candidate {
                    mid,
                    miner: e.claim.miner_pk,
                    commit_time: e.claim.commit_time,
                    votes: e
                        .surviving()
                        .map(|v| ScoredVote { validator: v.validator_pk, score: v.score, stake: v.v_stake })
                        .collect(),
                })
            })
            .collect()
    }

    fn involves(&self, pk: &PublicKey) -> bool {
        self.m_list.iter().any(|e| {
            &e.claim.miner_pk == pk
                || e.v_list.iter().any(|v| &v.validator_pk == pk)
                || e.c_list.iter().any(|c| &c.challenge.challenger_pk == pk)
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TxPool {
    pub orders: Vec<Order>,
    pub claims: Vec<Claim>,
    pub validations: Vec<Validation>,
    pub challenges: Vec<Challenge>,
}

/// Effects of a batch that outside components act on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchReport {
    pub admitted: Vec<Digest32>,
    pub rejected: Vec<(Digest32, AdmitError)>,
    pub finalized: Vec<Digest32>,
    pub settled: Vec<(Digest32, Vec<(PublicKey, Tokens)>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalLedger {
    #[serde(skip)]
    pub params: LedgerParams,
    pub time: u64,
    pub models: BTreeMap<Digest32, ModelBlob>,
    pub tx_pool: TxPool,
    pub table: BTreeMap<Digest32, OrderCycleData>,
    pub n_info: BTreeMap<PublicKey, NodeInfo>,
    pub book: StakeBook,
    /// Digests of every transaction ever admitted; blocks replays after pruning.
    pub seen: BTreeSet<Digest32>,
    #[serde(skip)]
    vid_index: BTreeMap<Digest32, Digest32>,
}

impl Registry for GlobalLedger {
    fn has_role(&self, pk: &PublicKey, role: Role) -> bool {
        self.n_info.get(pk).is_some_and(|n| n.registered && n.roles.contains(role))
    }

    fn stake_of(&self, pk: &PublicKey) -> Tokens {
        self.book.stake(pk)
    }
}

impl GlobalLedger {
    pub fn new(params: LedgerParams) -> Self {
        GlobalLedger {
            params,
            time: 0,
            models: BTreeMap::new(),
            tx_pool: TxPool::default(),
            table: BTreeMap::new(),
            n_info: BTreeMap::new(),
            book: StakeBook::default(),
            seen: BTreeSet::new(),
            vid_index: BTreeMap::new(),
        }
    }

    /// Ledger with initial balances minted.
    pub fn genesis(params: LedgerParams, time: u64, faucet: &[(PublicKey, Tokens)]) -> Self {
        let mut l = GlobalLedger::new(params);
        l.time = time;
        for (pk, t) in faucet {
            l.book.faucet(*pk, *t);
        }
        l
    }

    pub fn state_root(&self) -> Digest32 {
        hash(&self.to_bytes())
    }

    pub fn aggregators(&self) -> Vec<PublicKey> {
        self.n_info
            .values()
            .filter(|n| n.registered && n.roles.contains(Role::Aggregator))
            .map(|n| n.pk)
            .collect()
    }

    pub fn order(&self, oid: &Digest32) -> Option<&OrderCycleData> {
        self.table.get(oid)
    }

    pub fn validation(&self, vid: &Digest32) -> Option<&Validation> {
        let oid = self.vid_index.get(vid)?;
        self.table.get(oid)?.find_validation(vid)
    }

    fn require_role(&self, pk: &PublicKey, role: Role) -> Result<(), AdmitError> {
        if self.has_role(pk, role) {
            Ok(())
        } else {
            Err(AdmitError::UnknownSender)
        }
    }

    fn check_skew(&self, t: u64, now: u64) -> Result<(), AdmitError> {
        if t > now || now - t > self.params.max_skew_s {
            return Err(AdmitError::StaleTimestamp);
        }
        Ok(())
    }

    /// Applies a batch at its timestamp. Rejected transactions are skipped.
    pub fn apply_batch(&mut self, batch: &Batch) -> BatchReport {
        let now = batch.timestamp.max(self.time);
        let mut report = BatchReport::default();
        for tx in &batch.txs {
            let d = tx.digest();
            match self.admit_tx(tx, now, &mut report) {
                Ok(()) => report.admitted.push(d),
                Err(e) => report.rejected.push((d, e)),
            }
        }
        self.refresh(now, &mut report);
        report
    }

    pub fn admit_tx(&mut self, tx: &Tx, now: u64, report: &mut BatchReport) -> Result<(), AdmitError> {
        let digest = tx.digest();
        if self.seen.contains(&digest) {
            return Err(AdmitError::Duplicate);
        }
        match tx {
            Tx::Register(t) => self.admit_register(t)?,
            Tx::Unregister(t) => self.admit_unregister(t)?,
            Tx::Order(t) => self.admit_order(t, now)?,
            Tx::Commit(t) => self.admit_commit(t, now)?,
            Tx::Reveal(t) => self.admit_reveal(t, now)?,
            Tx::Validation(t) => self.admit_validation(t, now)?,
            Tx::Challenge(t) => self.admit_challenge(t, now)?,
            Tx::Report(t) => self.admit_report(t)?,
            Tx::Vote(t) => self.admit_vote(t)?,
            Tx::Delivered(t) => self.admit_delivered(t)?,
            Tx::Settled(t) => {
                let credits = self.admit_settled(t)?;
                report.settled.push((t.oid, credits));
            }
        }
        self.seen.insert(digest);
        Ok(())
    }

    fn admit_register(&mut self, t: &Register) -> Result<(), AdmitError> {
        if !t.verify() {
            return Err(AdmitError::BadSignature);
        }
        if t.roles.is_empty() {
            return Err(AdmitError::Invalid("empty role set"));
        }
        if self.n_info.get(&t.pk).is_some_and(|n| n.registered) {
            return Err(EconError::AlreadyRegistered.into());
        }
        self.book.register(t.pk, t.roles, t.deposit, &self.params.econ.min_stakes)?;
        let reputation = self.n_info.get(&t.pk).map_or(0, |n| n.reputation);
        self.n_info.insert(t.pk, NodeInfo { pk: t.pk, roles: t.roles, reputation, registered: true });
        Ok(())
    }

    fn admit_unregister(&mut self, t: &Unregister) -> Result<(), AdmitError> {
        if !t.verify() {
            return Err(AdmitError::BadSignature);
        }
        if !self.n_info.get(&t.pk).is_some_and(|n| n.registered) {
            return Err(AdmitError::UnknownSender);
        }
        if self.table.values().any(|c| c.involves(&t.pk)) {
            return Err(AdmitError::StakeInUse);
        }
        self.book.unregister(&t.pk)?;
        if let Some(n) = self.n_info.get_mut(&t.pk) {
            n.registered = false;
        }
        Ok(())
    }

    fn admit_order(&mut self, o: &Order, now: u64) -> Result<(), AdmitError> {
        if !o.verify() {
            return Err(AdmitError::BadSignature);
        }
        if !o.fields_valid() {
            return Err(AdmitError::Invalid("order fields"));
        }
        let w = PhaseWindows::of(o);
        if !w.is_valid() {
            return Err(AdmitError::Invalid("order windows"));
        }
        if now >= w.train_end {
            return Err(AdmitError::WindowClosed);
        }
        let spec = TaskSpec::from_link(&o.link).map_err(|_| AdmitError::Invalid("order link"))?;
        let oid = o.oid();
        self.book.escrow(oid, &o.client_pk, o.reward)?;
        self.tx_pool.orders.push(o.clone());
        self.table.insert(
            oid,
            OrderCycleData {
                order: o.clone(),
                spec,
                phase: phase_of(&w, now),
                m_list: Vec::new(),
                outcome: None,
                stage: Stage::Open,
                report: None,
            },
        );
        Ok(())
    }

    fn admit_commit(&mut self, c: &Claim, now: u64) -> Result<(), AdmitError> {
        if c.reveal.is_some() {
            return Err(AdmitError::Invalid("commit carries a reveal"));
        }
        if !c.verify_auth() {
            return Err(AdmitError::BadSignature);
        }
        self.require_role(&c.miner_pk, Role::Miner)?;
        if self.book.stake(&c.miner_pk) < self.params.econ.min_stakes.miner {
            return Err(AdmitError::InsufficientStake);
        }
        let cycle = self.table.get(&c.oid).ok_or(AdmitError::UnknownOrder)?;
        let w = cycle.windows();
        if !w.commit_open(now) || !w.commit_open(c.commit_time) {
            return Err(AdmitError::WindowClosed);
        }
        self.check_skew(c.commit_time, now)?;
        if let Some(prev) = cycle.entry(&c.miner_pk) {
            // A newer commitment replaces the older one; never roll back.
            if prev.claim.commit_time > c.commit_time {
                return Err(AdmitError::StaleTimestamp);
            }
        }
        let cycle = self.table.get_mut(&c.oid).expect("checked above");
        cycle.m_list.retain(|e| e.claim.miner_pk != c.miner_pk);
        cycle.m_list.push(ModelEntry { claim: c.clone(), v_list: Vec::new(), c_list: Vec::new() });
        self.tx_pool.claims.retain(|p| !(p.oid == c.oid && p.miner_pk == c.miner_pk));
        self.tx_pool.claims.push(c.clone());
        Ok(())
    }

    fn admit_reveal(&mut self, r: &RevealTx, now: u64) -> Result<(), AdmitError> {
        let cycle = self.table.get(&r.oid).ok_or(AdmitError::UnknownOrder)?;
        let w = cycle.windows();
        let entry = cycle.entry(&r.miner_pk).ok_or(AdmitError::UnknownClaim)?;
        if entry.claim.is_revealed() {
            return Err(AdmitError::Duplicate);
        }
        if now <= w.train_end {
            return Err(AdmitError::TooEarly);
        }
        if now > w.validate_end {
            return Err(AdmitError::WindowClosed);
        }
        if !entry.claim.binds(&r.model.payload) {
            return Err(AdmitError::SignatureMismatch);
        }
        match ToyModel::from_bytes(&r.model.payload) {
            Ok(m) if m.dimension() == cycle.spec.dimension as usize => {}
            _ => return Err(AdmitError::Invalid("model payload")),
        }
        let reveal = Reveal { model: r.model.clone(), time: now };
        let cycle = self.table.get_mut(&r.oid).expect("checked above");
        let entry = cycle.m_list.iter_mut().find(|e| e.claim.miner_pk == r.miner_pk).expect("checked above");
        entry.claim.reveal = Some(reveal.clone());
        if let Some(p) = self.tx_pool.claims.iter_mut().find(|p| p.oid == r.oid && p.miner_pk == r.miner_pk) {
            p.reveal = Some(reveal);
        }
        self.models.entry(r.model.mid).or_insert_with(|| r.model.clone());
        Ok(())
    }

    fn admit_validation(&mut self, v: &Validation, now: u64) -> Result<(), AdmitError> {
        self.require_role(&v.validator_pk, Role::Validator)?;
        if !v.verify() {
            return Err(AdmitError::BadSignature);
        }
        if v.v_stake.is_zero() || self.book.stake(&v.validator_pk) < v.v_stake {
            return Err(AdmitError::InsufficientStake);
        }
        let cycle = self.table.get(&v.oid).ok_or(AdmitError::UnknownOrder)?;
        let w = cycle.windows();
        if !w.validate_open(now) || !w.validate_open(v.sig_time) || v.message_time < v.sig_time {
            return Err(AdmitError::WindowClosed);
        }
        self.check_skew(v.sig_time, now)?;
        self.check_skew(v.message_time, now)?;
        if cycle.model_entries(&v.mid).next().is_none() {
            return Err(AdmitError::UnknownModel);
        }
        if cycle.model_entries(&v.mid).any(|e| e.v_list.iter().any(|x| x.validator_pk == v.validator_pk)) {
            return Err(AdmitError::Duplicate);
        }
        let cycle = self.table.get_mut(&v.oid).expect("checked above");
        for e in cycle.m_list.iter_mut().filter(|e| e.mid() == Some(v.mid)) {
            e.v_list.push(v.clone());
        }
        self.tx_pool.validations.push(v.clone());
        self.vid_index.insert(v.vid(), v.oid);
        Ok(())
    }

    fn admit_challenge(&mut self, c: &Challenge, now: u64) -> Result<(), AdmitError> {
        self.require_role(&c.challenger_pk, Role::Verifier)?;
        if !c.verify() {
            return Err(AdmitError::BadSignature);
        }
        if c.c_stake.is_zero() || self.book.stake(&c.challenger_pk) < c.c_stake {
            return Err(AdmitError::InsufficientStake);
        }
        let oid = *self.vid_index.get(&c.vid).ok_or(AdmitError::UnknownValidation)?;
        let cycle = self.table.get(&oid).ok_or(AdmitError::UnknownValidation)?;
        let v = cycle.find_validation(&c.vid).ok_or(AdmitError::UnknownValidation)?.clone();
        let w = cycle.windows();
        if !w.challenge_open(v.message_time, now) || !w.challenge_open(v.message_time, c.sig_time) || c.message_time < c.sig_time {
            return Err(AdmitError::WindowClosed);
        }
        self.check_skew(c.sig_time, now)?;
        self.check_skew(c.message_time, now)?;
        let entry = cycle.model_entries(&v.mid).next().ok_or(AdmitError::UnknownModel)?;
        if entry.c_list.iter().any(|r| r.challenge.vid == c.vid && (r.upheld || r.challenge.challenger_pk == c.challenger_pk)) {
            return Err(AdmitError::Duplicate);
        }
        let blob = entry.claim.reveal.as_ref().map(|r| &r.model).ok_or(AdmitError::UnknownModel)?;
        let truth = score_blob(blob, &cycle.spec).map_err(|_| AdmitError::Invalid("model payload"))?;
        let upheld = truth != v.score;

        if upheld {
            self.book.slash(&v.validator_pk, v.v_stake, Some(c.challenger_pk));
            self.bump_reputation(&v.validator_pk, -1);
            self.bump_reputation(&c.challenger_pk, 1);
        } else {
            self.book.slash(&c.challenger_pk, c.c_stake, Some(v.validator_pk));
            self.bump_reputation(&c.challenger_pk, -1);
        }
        let record = ChallengeRecord { challenge: c.clone(), upheld };
        let cycle = self.table.get_mut(&oid).expect("checked above");
        for e in cycle.m_list.iter_mut().filter(|e| e.mid() == Some(v.mid)) {
            e.c_list.push(record.clone());
        }
        self.tx_pool.challenges.push(c.clone());
        Ok(())
    }

    fn bump_reputation(&mut self, pk: &PublicKey, delta: i64) {
        if let Some(n) = self.n_info.get_mut(pk) {
            n.reputation += delta;
        }
    }

    fn awaiting_winner(&self, oid: &Digest32) -> Result<(&OrderCycleData, PublicKey), AdmitError> {
        let cycle = self.table.get(oid).ok_or(AdmitError::UnknownOrder)?;
        match (&cycle.stage, &cycle.outcome) {
            (Stage::AwaitingDelivery { .. }, Some(Outcome::Winner { miner, .. })) => Ok((cycle, *miner)),
            _ => Err(AdmitError::WrongStage),
        }
    }

    fn admit_report(&mut self, r: &Report) -> Result<(), AdmitError> {
        if !r.verify() {
            return Err(AdmitError::BadSignature);
        }
        let (cycle, _) = self.awaiting_winner(&r.oid)?;
        if cycle.order.client_pk != r.client_pk {
            return Err(AdmitError::NotAuthorized);
        }
        if cycle.report.is_some() {
            return Err(AdmitError::Duplicate);
        }
        self.table.get_mut(&r.oid).expect("checked above").report =
            Some(ReportState { votes: BTreeMap::new(), upheld: false });
        Ok(())
    }

    /// Registered non-aggregator nodes other than the accused miner.
    fn electorate(&self, accused: &PublicKey) -> Vec<PublicKey> {
        self.n_info
            .values()
            .filter(|n| n.registered && !n.roles.contains(Role::Aggregator) && &n.pk != accused)
            .map(|n| n.pk)
            .collect()
    }

    fn admit_vote(&mut self, v: &Vote) -> Result<(), AdmitError> {
        if !v.verify() {
            return Err(AdmitError::BadSignature);
        }
        let (cycle, miner) = self.awaiting_winner(&v.oid)?;
        let report = cycle.report.as_ref().ok_or(AdmitError::WrongStage)?;
        if report.upheld {
            return Err(AdmitError::WrongStage);
        }
        let electorate = self.electorate(&miner);
        if !electorate.contains(&v.voter_pk) {
            return Err(AdmitError::UnknownSender);
        }
        if report.votes.contains_key(&v.voter_pk) {
            return Err(AdmitError::Duplicate);
        }
        let total: u128 = electorate.iter().map(|p| self.book.stake(p).0 as u128).sum();
        let mut votes = report.votes.clone();
        votes.insert(v.voter_pk, v.support);
        let support: u128 = votes.iter().filter(|(_, s)| **s).map(|(p, _)| self.book.stake(p).0 as u128).sum();
        let upheld = total > 0 && support * 10_000 > total * self.params.econ.vote_threshold_bps as u128;
        let client = cycle.order.client_pk;

        let cycle = self.table.get_mut(&v.oid).expect("checked above");
        cycle.report = Some(ReportState { votes, upheld });
        if upheld {
            cycle.stage = Stage::Ready;
            let full = self.book.stake(&miner);
            self.book.slash(&miner, full, Some(client));
            self.book.redirect(&v.oid, &miner, client)?;
            self.bump_reputation(&miner, -1);
        }
        Ok(())
    }

    fn admit_delivered(&mut self, d: &Delivered) -> Result<(), AdmitError> {
        if !d.verify() {
            return Err(AdmitError::BadSignature);
        }
        let (cycle, _) = self.awaiting_winner(&d.oid)?;
        if cycle.order.client_pk != d.client_pk {
            return Err(AdmitError::NotAuthorized);
        }
        let cycle = self.table.get_mut(&d.oid).expect("checked above");
        cycle.stage = Stage::Ready;
        cycle.report = None;
        Ok(())
    }

    fn admit_settled(&mut self, s: &Settled) -> Result<Vec<(PublicKey, Tokens)>, AdmitError> {
        if !s.verify() {
            return Err(AdmitError::BadSignature);
        }
        self.require_role(&s.aggregator_pk, Role::Aggregator)?;
        let cycle = self.table.get(&s.oid).ok_or(AdmitError::UnknownOrder)?;
        if cycle.stage != Stage::Ready {
            return Err(AdmitError::WrongStage);
        }
        let credits = self.book.settle(&s.oid, &self.aggregators())?;
        self.prune(&s.oid);
        Ok(credits)
    }

    /// Drops a settled order and its records.
    fn prune(&mut self, oid: &Digest32) {
        let Some(cycle) = self.table.remove(oid) else { return };
        self.tx_pool.orders.retain(|o| o.oid() != *oid);
        self.tx_pool.claims.retain(|c| c.oid != *oid);
        self.tx_pool.validations.retain(|v| v.oid != *oid);
        let vids: BTreeSet<Digest32> = cycle.m_list.iter().flat_map(|e| e.v_list.iter().map(Validation::vid)).collect();
        self.tx_pool.challenges.retain(|c| !vids.contains(&c.vid));
        for vid in &vids {
            self.vid_index.remove(vid);
        }
        let still_used: BTreeSet<Digest32> = self
            .table
            .values()
            .flat_map(|c| c.m_list.iter().filter_map(ModelEntry::mid))
            .collect();
        for e in &cycle.m_list {
            if let Some(mid) = e.mid() {
                if !still_used.contains(&mid) {
                    self.models.remove(&mid);
                }
            }
        }
    }

    /// Advances phases and runs time-triggered transitions at `now`.
    pub fn refresh(&mut self, now: u64, report: &mut BatchReport) {
        self.time = self.time.max(now);
        let now = self.time;
        let oids: Vec<Digest32> = self.table.keys().copied().collect();
        for oid in oids {
            let cycle = self.table.get_mut(&oid).expect("key listed");
            let phase = phase_of(&cycle.windows(), now).max(cycle.phase);
            cycle.phase = phase;
            if phase == Phase::Finalized && cycle.outcome.is_none() {
                self.finalize(&oid, now);
                report.finalized.push(oid);
            }
            let cycle = self.table.get_mut(&oid).expect("key listed");
            if let Stage::AwaitingDelivery { deadline } = cycle.stage {
                if now >= deadline {
                    cycle.stage = Stage::Ready;
                }
            }
        }
    }

    fn finalize(&mut self, oid: &Digest32, now: u64) {
        let cycle = self.table.get(oid).expect("caller checked");
        let reward = cycle.order.reward;
        let split = self.params.econ.split;
        match finalize_candidates(reward, &cycle.candidates(), &split) {
            Ok(res) => {
                let payout = PendingPayout { payouts: res.payouts.clone(), tax: res.tax };
                self.book.seal(*oid, payout).expect("escrow held since admission");
                self.bump_reputation(&res.winner_pk, 1);
                for v in &res.winning_validators {
                    self.bump_reputation(v, 1);
                }
                let cycle = self.table.get_mut(oid).expect("caller checked");
                cycle.outcome = Some(Outcome::Winner {
                    mid: res.optimum_mid,
                    miner: res.winner_pk,
                    score: res.score,
                    validators: res.winning_validators,
                });
                cycle.stage = Stage::AwaitingDelivery { deadline: now + self.params.econ.delivery_grace_s };
            }
            Err(_) => {
                let tax = reward.mul_bps(split.tax_bps);
                let mut payouts = BTreeMap::new();
                payouts.insert(cycle.order.client_pk, Tokens(reward.0 - tax.0));
                self.book.seal(*oid, PendingPayout { payouts, tax }).expect("escrow held since admission");
                let cycle = self.table.get_mut(oid).expect("caller checked");
                cycle.outcome = Some(Outcome::Refunded);
                cycle.stage = Stage::Ready;
            }
        }
    }

    /// Sealed orders whose payouts can be settled.
    pub fn ready_for_settlement(&self) -> Vec<Digest32> {
        self.table.iter().filter(|(_, c)| c.stage == Stage::Ready).map(|(oid, _)| *oid).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    /// Rebuilds derived indexes after decoding.
    fn reindex(&mut self) {
        self.vid_index.clear();
        for (oid, c) in &self.table {
            for e in &c.m_list {
                for v in &e.v_list {
                    self.vid_index.insert(v.vid(), *oid);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- canonical encoding

fn put_map<K, V>(w: &mut Writer, m: &BTreeMap<K, V>, mut f: impl FnMut(&mut Writer, &K, &V)) {
    w.put_u32(m.len() as u32);
    for (k, v) in m {
        f(w, k, v);
    }
}

impl Canonical for ChallengeRecord {
    fn encode(&self, w: &mut Writer) {
        self.challenge.encode(w);
        w.put_bool(self.upheld);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ChallengeRecord { challenge: Challenge::decode(r)?, upheld: r.bool()? })
    }
}

impl Canonical for ModelEntry {
    fn encode(&self, w: &mut Writer) {
        self.claim.encode(w);
        encode_seq(w, &self.v_list);
        encode_seq(w, &self.c_list);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ModelEntry { claim: Claim::decode(r)?, v_list: decode_seq(r)?, c_list: decode_seq(r)? })
    }
}

impl Canonical for OrderCycleData {
    fn encode(&self, w: &mut Writer) {
        self.order.encode(w);
        w.put_u8(self.phase.code());
        encode_seq(w, &self.m_list);
        match &self.outcome {
            None => w.put_u8(0),
            Some(Outcome::Refunded) => w.put_u8(1),
            Some(Outcome::Winner { mid, miner, score, validators }) => {
                w.put_u8(2);
                w.put_digest(mid);
                w.put_pk(miner);
                w.put_u64(score.0);
                w.put_u32(validators.len() as u32);
                for v in validators {
                    w.put_pk(v);
                }
            }
        }
        match self.stage {
            Stage::Open => w.put_u8(0),
            Stage::AwaitingDelivery { deadline } => {
                w.put_u8(1);
                w.put_u64(deadline);
            }
            Stage::Ready => w.put_u8(2),
        }
        match &self.report {
            None => w.put_u8(0),
            Some(rep) => {
                w.put_u8(1);
                put_map(w, &rep.votes, |w, k, v| {
                    w.put_pk(k);
                    w.put_bool(*v);
                });
                w.put_bool(rep.upheld);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let order = Order::decode(r)?;
        let spec = TaskSpec::from_link(&order.link).map_err(|_| CodecError::Invalid("order link"))?;
        let tag = r.u8()?;
        let phase = Phase::from_code(tag).ok_or(CodecError::InvalidTag { what: "phase", tag })?;
        let m_list = decode_seq(r)?;
        let outcome = match r.u8()? {
            0 => None,
            1 => Some(Outcome::Refunded),
            2 => {
                let mid = r.digest()?;
                let miner = r.pk()?;
                let score = Score(r.u64()?);
                let n = r.u32()?;
                let validators = (0..n).map(|_| r.pk()).collect::<Result<_, _>>()?;
                Some(Outcome::Winner { mid, miner, score, validators })
            }
            tag => return Err(CodecError::InvalidTag { what: "outcome", tag }),
        };
        let stage = match r.u8()? {
            0 => Stage::Open,
            1 => Stage::AwaitingDelivery { deadline: r.u64()? },
            2 => Stage::Ready,
            tag => return Err(CodecError::InvalidTag { what: "stage", tag }),
        };
        let report = match r.u8()? {
            0 => None,
            1 => {
                let mut votes = BTreeMap::new();
                for _ in 0..r.u32()? {
                    votes.insert(r.pk()?, r.bool()?);
                }
                Some(ReportState { votes, upheld: r.bool()? })
            }
            tag => return Err(CodecError::InvalidTag { what: "report", tag }),
        };
        Ok(OrderCycleData { order, spec, phase, m_list, outcome, stage, report })
    }
}

impl Canonical for GlobalLedger {
    fn encode(&self, w: &mut Writer) {
        w.put_raw(b"pot/ledger/v1");
        w.put_u64(self.time);
        put_map(w, &self.models, |w, _, m| m.encode(w));
        encode_seq(w, &self.tx_pool.orders);
        encode_seq(w, &self.tx_pool.claims);
        encode_seq(w, &self.tx_pool.validations);
        encode_seq(w, &self.tx_pool.challenges);
        put_map(w, &self.table, |w, oid, c| {
            w.put_digest(oid);
            c.encode(w);
        });
        put_map(w, &self.n_info, |w, _, n| {
            w.put_pk(&n.pk);
            w.put_u8(n.roles.0);
            w.put_i64(n.reputation);
            w.put_bool(n.registered);
        });
        self.book.encode(w);
        w.put_u32(self.seen.len() as u32);
        for d in &self.seen {
            w.put_digest(d);
        }
    }

    /// Decodes with default parameters; callers set `params` afterwards.
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        if r.take(13)? != b"pot/ledger/v1" {
            return Err(CodecError::Invalid("ledger magic"));
        }
        let mut l = GlobalLedger::new(LedgerParams::default());
        l.time = r.u64()?;
        for _ in 0..r.u32()? {
            let m = ModelBlob::decode(r)?;
            l.models.insert(m.mid, m);
        }
        l.tx_pool.orders = decode_seq(r)?;
        l.tx_pool.claims = decode_seq(r)?;
        l.tx_pool.validations = decode_seq(r)?;
        l.tx_pool.challenges = decode_seq(r)?;
        for _ in 0..r.u32()? {
            let oid = r.digest()?;
            l.table.insert(oid, OrderCycleData::decode(r)?);
        }
        for _ in 0..r.u32()? {
            let pk = r.pk()?;
            let roles = RoleSet(r.u8()?);
            let reputation = r.i64()?;
            let registered = r.bool()?;
            l.n_info.insert(pk, NodeInfo { pk, roles, reputation, registered });
        }
        l.book = StakeBook::decode(r)?;
        for _ in 0..r.u32()? {
            l.seen.insert(r.digest()?);
        }
        l.reindex();
        Ok(l)
    }
}

/// An ordered log of applied batches; replaying it from the same genesis
/// reproduces the same ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TxLog {
    pub batches: Vec<Batch>,
}

impl TxLog {
    pub fn replay(&self, mut genesis: GlobalLedger) -> GlobalLedger {
        for b in &self.batches {
            genesis.apply_batch(b);
        }
        genesis
    }
}

impl Canonical for TxLog {
    fn encode(&self, w: &mut Writer) {
        encode_seq(w, &self.batches);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TxLog { batches: decode_seq(r)? })
    }
}
