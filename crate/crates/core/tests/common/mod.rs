//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pot_core::crypto::{Digest32, KeyPair, PublicKey};
use pot_core::ledger::{AdmitError, BatchReport, GlobalLedger, LedgerParams};
use pot_core::protocol::PhaseWindows;
use pot_core::records::{
    Batch, Challenge, Claim, ModelBlob, Order, OrderTemplate, Register, RevealTx, Role, RoleSet, Tokens, Tx, Validation,
};
use pot_core::workload::{vrf_model, Score, TaskSpec, ToyModel};
use pot_core::codec::Canonical;

pub const DIM: u32 = 4;

/// A ledger with one open order and registered participants: two miners,
/// three validators, one verifier and one aggregator.
pub struct Fixture {
    pub ledger: GlobalLedger,
    pub client: KeyPair,
    pub miners: Vec<KeyPair>,
    pub validators: Vec<KeyPair>,
    pub verifier: KeyPair,
    pub aggregator: KeyPair,
    pub order: Order,
    pub spec: TaskSpec,
}

impl Fixture {
    pub fn new(t0: u64, dt_train: u64, dt_validate: u64, dt_challenge: u64) -> Fixture {
        Fixture::with_params(LedgerParams::default(), t0, dt_train, dt_validate, dt_challenge)
    }

    pub fn with_params(params: LedgerParams, t0: u64, dt_train: u64, dt_validate: u64, dt_challenge: u64) -> Fixture {
        let client = KeyPair::from_seed(901);
        let miners: Vec<KeyPair> = (0..2).map(|i| KeyPair::from_seed(910 + i)).collect();
        let validators: Vec<KeyPair> = (0..3).map(|i| KeyPair::from_seed(920 + i)).collect();
        let verifier = KeyPair::from_seed(930);
        let aggregator = KeyPair::from_seed(940);
        let everyone: Vec<&KeyPair> =
            [&client, &verifier, &aggregator].into_iter().chain(&miners).chain(&validators).collect();
        let faucet: Vec<(PublicKey, Tokens)> = everyone.iter().map(|k| (k.public_key(), Tokens::whole(10_000))).collect();
        let mut ledger = GlobalLedger::genesis(params, 0, &faucet);

        let reg = |k: &KeyPair, r: Role, d: u64| Tx::Register(Register::signed(k, RoleSet::of(&[r]), Tokens::whole(d), 0));
        let mut txs = vec![reg(&verifier, Role::Verifier, 10), reg(&aggregator, Role::Aggregator, 1000)];
        txs.extend(miners.iter().map(|k| reg(k, Role::Miner, 100)));
        txs.extend(validators.iter().map(|k| reg(k, Role::Validator, 100)));
        let spec = TaskSpec::new(DIM, 17, 23);
        let order = OrderTemplate {
            reward: Tokens::whole(100),
            workload_type: "toy-regression".into(),
            t0,
            dt_train,
            dt_validate,
            dt_challenge,
            link: spec.to_link(),
        }
        .sign(&client)
        .unwrap();
        txs.push(Tx::Order(order.clone()));
        let r = ledger.apply_batch(&Batch::new(0, None, txs));
        assert!(r.rejected.is_empty(), "fixture setup rejected: {:?}", r.rejected);
        Fixture { ledger, client, miners, validators, verifier, aggregator, order, spec }
    }

    pub fn oid(&self) -> Digest32 {
        self.order.oid()
    }

    pub fn windows(&self) -> PhaseWindows {
        PhaseWindows::of(&self.order)
    }

    pub fn apply(&mut self, t: u64, txs: Vec<Tx>) -> BatchReport {
        self.ledger.apply_batch(&Batch::new(t, None, txs))
    }

    /// Applies a single transaction and returns its admission result.
    pub fn admit(&mut self, t: u64, tx: Tx) -> Result<(), AdmitError> {
        let d = tx.digest();
        let r = self.apply(t, vec![tx]);
        match r.rejected.into_iter().find(|(x, _)| *x == d) {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }

    pub fn model(&self, k: i64) -> ToyModel {
        ToyModel { params: vec![k; DIM as usize] }
    }

    pub fn true_score(&self, m: &ToyModel) -> Score {
        vrf_model(m, &self.spec).unwrap()
    }

    pub fn commit(&self, miner: usize, m: &ToyModel, t: u64) -> Tx {
        Tx::Commit(Claim::commit(self.oid(), &m.to_bytes(), &self.miners[miner], t))
    }

    pub fn reveal(&self, miner: usize, m: &ToyModel) -> Tx {
        self.reveal_blob(miner, ModelBlob::new(m.to_bytes()))
    }

    pub fn reveal_blob(&self, miner: usize, blob: ModelBlob) -> Tx {
        Tx::Reveal(RevealTx { oid: self.oid(), miner_pk: self.miners[miner].public_key(), model: blob })
    }

    pub fn validation(&self, v: usize, m: &ToyModel, score: Score, t: u64) -> Validation {
        let mid = ModelBlob::new(m.to_bytes()).mid;
        Validation::signed(&self.validators[v], self.oid(), mid, score, Tokens::whole(10), t, t)
    }

    pub fn challenge(&self, v: &Validation, t: u64) -> Tx {
        Tx::Challenge(Challenge::signed(&self.verifier, v.vid(), Tokens::whole(5), t, t))
    }
}

// ---------------------------------------------------------------- window oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Commit,
    Reveal,
    Validate,
    Challenge,
}

pub const ACTIONS: [Action; 4] = [Action::Commit, Action::Reveal, Action::Validate, Action::Challenge];

/// Accept/reject straight from the window equations, with the test data
/// released when training closes. `prior` is the validation time for a
/// challenge and ignored otherwise.
pub fn window_oracle(a: Action, t0: u64, dt_train: u64, dt_validate: u64, dt_challenge: u64, now: u64, prior: u64) -> bool {
    let t3 = t0 + dt_train;
    match a {
        Action::Commit => t0 <= now && now < t0 + dt_train,
        Action::Reveal | Action::Validate => t3 < now && now <= t3 + dt_validate,
        Action::Challenge => prior < now && now <= t3 + dt_validate + dt_challenge,
    }
}

/// Phase names by the same equations.
pub fn phase_oracle(t0: u64, dt_train: u64, dt_validate: u64, dt_challenge: u64, now: u64) -> &'static str {
    let t3 = t0 + dt_train;
    if now < t3 {
        "training"
    } else if now <= t3 + dt_validate {
        "validation"
    } else if now <= t3 + dt_validate + dt_challenge {
        "challenge"
    } else {
        "finalized"
    }
}

// ---------------------------------------------------------------- finalize oracle

#[derive(Clone, Debug)]
pub struct OracleVote {
    pub validator: PublicKey,
    pub score: u64,
    pub stake: u64,
}

#[derive(Clone, Debug)]
pub struct OracleModel {
    pub mid: Digest32,
    pub miner: PublicKey,
    pub commit_time: u64,
    pub votes: Vec<OracleVote>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleOutcome {
    pub mid: Digest32,
    pub miner: PublicKey,
    pub score: u64,
    pub validators: Vec<PublicKey>,
    pub payouts: BTreeMap<PublicKey, u64>,
    pub tax: u64,
}

/// Stake-weighted plurality score; equal weights resolve to the lower score.
pub fn oracle_adopted(votes: &[OracleVote]) -> Option<u64> {
    let mut scores: Vec<u64> = votes.iter().map(|v| v.score).collect();
    scores.sort_unstable();
    scores.dedup();
    let weight = |s: u64| -> u128 { votes.iter().filter(|v| v.score == s).map(|v| v.stake as u128).sum() };
    let top = scores.iter().map(|s| weight(*s)).max()?;
    scores.into_iter().find(|s| weight(*s) == top)
}

/// Brute force: score every model, sort all of them by the ranking rule
/// and split the reward in micro-tokens.
pub fn finalize_oracle(reward: u64, tax_bps: u64, share_bps: u64, models: &[OracleModel]) -> Option<OracleOutcome> {
    let mut ranked: Vec<(u64, &OracleModel)> =
        models.iter().filter_map(|m| oracle_adopted(&m.votes).map(|s| (s, m))).collect();
    ranked.sort_by(|(sa, a), (sb, b)| {
        sb.cmp(sa)
            .then(a.commit_time.cmp(&b.commit_time))
            .then(a.mid.cmp(&b.mid))
            .then(a.miner.cmp(&b.miner))
    });
    let (score, win) = *ranked.first()?;
    let tax = (reward as u128 * tax_bps as u128 / 10_000) as u64;
    let pool = (reward as u128 * share_bps as u128 / 10_000) as u64;
    let agreeing: Vec<&OracleVote> = win.votes.iter().filter(|v| v.score == score).collect();
    let stake: u128 = agreeing.iter().map(|v| v.stake as u128).sum();
    let mut payouts: BTreeMap<PublicKey, u64> = BTreeMap::new();
    let mut paid = 0u64;
    for v in &agreeing {
        let part = (pool as u128 * v.stake as u128 / stake) as u64;
        *payouts.entry(v.validator).or_default() += part;
        paid += part;
    }
    *payouts.entry(win.miner).or_default() += reward - tax - paid;
    Some(OracleOutcome {
        mid: win.mid,
        miner: win.miner,
        score,
        validators: agreeing.iter().map(|v| v.validator).collect(),
        payouts,
        tax,
    })
}

/// Test identities `0..200`, derived once.
pub fn pk(i: u64) -> PublicKey {
    static KEYS: std::sync::OnceLock<Vec<PublicKey>> = std::sync::OnceLock::new();
    KEYS.get_or_init(|| (0..200).map(|i| KeyPair::from_seed(5000 + i).public_key()).collect())[i as usize]
}

pub fn mid(i: u64) -> Digest32 {
    pot_core::crypto::hash(&i.to_be_bytes())
}

// ---------------------------------------------------------------- finalize cases

use pot_core::protocol::{finalize_candidates, Candidate, ScoredVote, SplitParams};

pub fn to_candidates(models: &[OracleModel]) -> Vec<Candidate> {
    models
        .iter()
        .map(|m| Candidate {
            mid: m.mid,
            miner: m.miner,
            commit_time: m.commit_time,
            votes: m
                .votes
                .iter()
                .map(|v| ScoredVote { validator: v.validator, score: Score(v.score), stake: Tokens(v.stake) })
                .collect(),
        })
        .collect()
}

/// Runs the implementation and the oracle on one instance.
pub fn check_finalize(reward: u64, split: SplitParams, models: &[OracleModel]) -> Result<(), String> {
    let got = finalize_candidates(Tokens(reward), &to_candidates(models), &split);
    let want = finalize_oracle(reward, split.tax_bps, split.validator_share_bps, models);
    match (got, want) {
        (Err(_), None) => Ok(()),
        (Ok(g), Some(w)) => {
            let payouts: BTreeMap<PublicKey, u64> = g.payouts.iter().map(|(k, v)| (*k, v.0)).collect();
            let same = g.optimum_mid == w.mid
                && g.winner_pk == w.miner
                && g.score.0 == w.score
                && g.winning_validators == w.validators
                && payouts == w.payouts
                && g.tax.0 == w.tax;
            if !same {
                return Err(format!("implementation {g:?} vs oracle {w:?}"));
            }
            if g.payout_total().0 + g.tax.0 != reward {
                return Err(format!("payouts {} + tax {} != reward {reward}", g.payout_total().0, g.tax.0));
            }
            Ok(())
        }
        (g, w) => Err(format!("implementation {g:?} vs oracle {w:?}")),
    }
}

/// Every weak ordering of `m` model scores (`m^m` level assignments),
/// each under two commit-time patterns and 1..=3 validators who all
/// validate every model with unequal stakes.
pub fn exhaustive_cases(max_models: usize, max_validators: usize) -> Vec<Vec<OracleModel>> {
    let mut out = Vec::new();
    for m in 1..=max_models {
        let levels = m as u64;
        let combos = levels.pow(m as u32);
        for code in 0..combos {
            let mut c = code;
            let scores: Vec<u64> = (0..m)
                .map(|_| {
                    let s = c % levels;
                    c /= levels;
                    500_000 + s * 1000
                })
                .collect();
            for tied_times in [false, true] {
                for nv in 1..=max_validators {
                    let models = (0..m)
                        .map(|i| OracleModel {
                            mid: mid(i as u64),
                            miner: pk(i as u64),
                            commit_time: if tied_times { 10 } else { 10 + (m - i) as u64 },
                            votes: (0..nv)
                                .map(|v| OracleVote { validator: pk(100 + v as u64), score: scores[i], stake: 10_000_000 * (v as u64 + 1) })
                                .collect(),
                        })
                        .collect();
                    out.push(models);
                }
            }
        }
    }
    out
}

/// Random instances where validators disagree, skip models and stake
/// unevenly.
pub fn random_case(rng: &mut impl rand::Rng) -> (u64, Vec<OracleModel>) {
    let m = rng.gen_range(0..=5);
    let reward = rng.gen_range(1..=1_000_000_000u64);
    let models = (0..m)
        .map(|i| OracleModel {
            mid: mid(rng.gen_range(0..8)),
            miner: pk(i),
            commit_time: rng.gen_range(0..4),
            votes: (0..3u64)
                .filter(|_| rng.gen_bool(0.7))
                .collect::<Vec<_>>()
                .into_iter()
                .map(|v| OracleVote {
                    validator: pk(100 + v),
                    score: rng.gen_range(0..4) * 250_000,
                    stake: rng.gen_range(1..=50_000_000),
                })
                .collect(),
        })
        .collect();
    (reward, models)
}

// ---------------------------------------------------------------- window fuzz

use pot_core::protocol::{phase_of, pot_claim_commit, pot_claim_reveal, pot_validate, pot_verify, ProtocolError};
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct WindowCase {
    pub t0: u64,
    pub dt_train: u64,
    pub dt_validate: u64,
    pub dt_challenge: u64,
    pub action: Action,
    pub now: u64,
    /// Validation time for challenges.
    pub prior: u64,
    pub ledger_level: bool,
}

impl WindowCase {
    pub fn random(rng: &mut impl Rng) -> WindowCase {
        let t0 = rng.gen_range(0..40);
        let dt_train = rng.gen_range(1..20);
        let dt_validate = rng.gen_range(1..20);
        let dt_challenge = rng.gen_range(1..20);
        let train_end = t0 + dt_train;
        let end = train_end + dt_validate + dt_challenge;
        let action = ACTIONS[rng.gen_range(0..4)];
        let prior = rng.gen_range(train_end + 1..=train_end + dt_validate);
        let lo = if action == Action::Challenge { prior } else { 0 };
        let now = rng.gen_range(lo..=end + 5);
        WindowCase { t0, dt_train, dt_validate, dt_challenge, action, now, prior, ledger_level: rng.gen_bool(0.5) }
    }

    pub fn expected(&self) -> bool {
        window_oracle(self.action, self.t0, self.dt_train, self.dt_validate, self.dt_challenge, self.now, self.prior)
    }

    /// Accept/reject from the implementation.
    pub fn actual(&self) -> bool {
        let mut f = Fixture::new(self.t0, self.dt_train, self.dt_validate, self.dt_challenge);
        let w = f.windows();
        let m = f.model(3);
        let truth = f.true_score(&m);
        let lie = Score(truth.0 ^ 1);
        let commit_at = self.t0;
        let reveal_at = w.train_end + 1;
        if self.ledger_level {
            match self.action {
                Action::Commit => f.admit(self.now, f.commit(0, &m, self.now)).is_ok(),
                Action::Reveal => {
                    f.admit(commit_at, f.commit(0, &m, commit_at)).unwrap();
                    f.admit(self.now, f.reveal(0, &m)).is_ok()
                }
                Action::Validate => {
                    f.admit(commit_at, f.commit(0, &m, commit_at)).unwrap();
                    // Revealing in the same batch lets the validation land at
                    // any time, including before the test data is out.
                    let v = f.validation(0, &m, truth, self.now);
                    let d = Tx::Validation(v.clone()).digest();
                    let r = f.apply(self.now, vec![f.reveal(0, &m), Tx::Validation(v)]);
                    r.admitted.contains(&d)
                }
                Action::Challenge => {
                    f.admit(commit_at, f.commit(0, &m, commit_at)).unwrap();
                    f.admit(reveal_at, f.reveal(0, &m)).unwrap();
                    let score = if self.now.is_multiple_of(2) { lie } else { truth };
                    let v = f.validation(0, &m, score, self.prior);
                    f.admit(self.prior, Tx::Validation(v.clone())).unwrap();
                    f.admit(self.now, f.challenge(&v, self.now)).is_ok()
                }
            }
        } else {
            let claim = Claim::commit(f.oid(), &m.to_bytes(), &f.miners[0], commit_at);
            let revealed = pot_claim_reveal(&claim, &m, &w, reveal_at).unwrap();
            match self.action {
                Action::Commit => pot_claim_commit(&f.order, &m, &f.miners[0], &f.ledger, self.now).is_ok(),
                Action::Reveal => pot_claim_reveal(&claim, &m, &w, self.now).is_ok(),
                Action::Validate => {
                    pot_validate(&revealed, &f.spec, &f.validators[0], Tokens::whole(10), &f.ledger, &w, self.now).is_ok()
                }
                Action::Challenge => {
                    let v = f.validation(0, &m, lie, self.prior);
                    let blob = revealed.reveal.as_ref().map(|r| &r.model);
                    match pot_verify(&v, &f.spec, blob, &f.verifier, Tokens::whole(5), &w, self.now) {
                        Ok(out) => out.challenge.is_some(),
                        Err(ProtocolError::WindowClosed) => false,
                        Err(e) => panic!("unexpected {e:?}"),
                    }
                }
            }
        }
    }

    pub fn phase_agrees(&self) -> bool {
        let w = PhaseWindows::new(self.t0, self.dt_train, self.dt_validate, self.dt_challenge);
        phase_of(&w, self.now).name() == phase_oracle(self.t0, self.dt_train, self.dt_validate, self.dt_challenge, self.now)
    }
}

// ---------------------------------------------------------------- scenario oracle

use pot_core::ledger::TxLog;
use pot_core::scenario::Scenario;

/// Best achievable score per order and every miner that reached it,
/// recomputed from the admitted reveals in a replayed log.
pub fn argmax_oracle(s: &Scenario, log: &TxLog) -> BTreeMap<Digest32, (Score, Vec<PublicKey>)> {
    let mut ledger = s.genesis();
    let mut specs: BTreeMap<Digest32, TaskSpec> = BTreeMap::new();
    let mut best: BTreeMap<Digest32, (Score, Vec<PublicKey>)> = BTreeMap::new();
    for b in &log.batches {
        let r = ledger.apply_batch(b);
        for tx in &b.txs {
            if !r.admitted.contains(&tx.digest()) {
                continue;
            }
            match tx {
                Tx::Order(o) => {
                    specs.insert(o.oid(), TaskSpec::from_link(&o.link).unwrap());
                }
                Tx::Reveal(rv) => {
                    let m = ToyModel::from_bytes(&rv.model.payload).unwrap();
                    let score = vrf_model(&m, &specs[&rv.oid]).unwrap();
                    let e = best.entry(rv.oid).or_insert((score, Vec::new()));
                    if score > e.0 {
                        *e = (score, Vec::new());
                    }
                    if score == e.0 {
                        e.1.push(rv.miner_pk);
                    }
                }
                _ => {}
            }
        }
    }
    best
}

/// Admitted validations and challenges in a log, judged by recomputing
/// every score from the revealed model.
#[derive(Debug, Default)]
pub struct DisputeAudit {
    /// VIDs of admitted validations whose score is wrong, with the validator.
    pub lies: BTreeMap<Digest32, PublicKey>,
    /// Admitted challenges as `(vid, challenger)`.
    pub challenged: Vec<(Digest32, PublicKey)>,
}

impl DisputeAudit {
    pub fn false_challenges(&self) -> impl Iterator<Item = &(Digest32, PublicKey)> {
        self.challenged.iter().filter(|(vid, _)| !self.lies.contains_key(vid))
    }

    pub fn unchallenged_lies(&self) -> impl Iterator<Item = (&Digest32, &PublicKey)> {
        self.lies.iter().filter(|(vid, _)| !self.challenged.iter().any(|(c, _)| c == *vid))
    }
}

pub fn dispute_audit(s: &Scenario, log: &TxLog) -> DisputeAudit {
    let mut ledger = s.genesis();
    let mut specs: BTreeMap<Digest32, TaskSpec> = BTreeMap::new();
    let mut models: BTreeMap<Digest32, ToyModel> = BTreeMap::new();
    let mut audit = DisputeAudit::default();
    for b in &log.batches {
        let r = ledger.apply_batch(b);
        for tx in b.txs.iter().filter(|tx| r.admitted.contains(&tx.digest())) {
            match tx {
                Tx::Order(o) => {
                    specs.insert(o.oid(), TaskSpec::from_link(&o.link).unwrap());
                }
                Tx::Reveal(rv) => {
                    models.insert(rv.model.mid, ToyModel::from_bytes(&rv.model.payload).unwrap());
                }
                Tx::Validation(v) => {
                    if vrf_model(&models[&v.mid], &specs[&v.oid]).unwrap() != v.score {
                        audit.lies.insert(v.vid(), v.validator_pk);
                    }
                }
                Tx::Challenge(c) => {
                    audit.challenged.push((c.vid, c.challenger_pk));
                }
                _ => {}
            }
        }
    }
    audit
}

// ---------------------------------------------------------------- pbft bench

use std::sync::Arc;

use pot_core::pbft::{
    quorum_sizes, ConsensusConfig, Directory, MsgKind, NodeId, PbftMessage, Replica, ReplyCollector, SigCache,
};
use pot_core::sync::{client_key, replica_key};

pub struct Bench {
    pub cfg: ConsensusConfig,
    pub keys: Vec<KeyPair>,
    pub dir: Arc<Directory>,
    pub cache: Arc<SigCache>,
}

impl Bench {
    pub fn new(n: usize) -> Bench {
        let mut keys: Vec<KeyPair> = (0..n).map(replica_key).collect();
        keys.push(client_key(0));
        let dir = Arc::new(Directory { keys: keys.iter().map(|k| k.public_key()).collect() });
        Bench { cfg: ConsensusConfig::new(n), keys, dir, cache: Arc::new(SigCache::default()) }
    }

    pub fn replica(&self, id: usize) -> Replica {
        let genesis = GlobalLedger::new(Default::default());
        Replica::new(id as NodeId, self.cfg, self.keys[id].clone(), self.dir.clone(), self.cache.clone(), genesis)
    }

    pub fn msg(&self, from: usize, kind: MsgKind, batch: &Batch, payload: Option<Vec<u8>>) -> PbftMessage {
        PbftMessage::signed(&self.keys[from], kind, 0, 1, batch.digest(), payload, from as NodeId)
    }

    pub fn pre_prepare(&self, batch: &Batch) -> PbftMessage {
        self.msg(0, MsgKind::PrePrepare, batch, Some(batch.to_bytes()))
    }
}

pub fn sends(out: &pot_core::pbft::StepOutput, kind: MsgKind) -> bool {
    out.out.iter().any(|o| o.msg.kind == kind)
}

/// Prepares from `2f-1` replicas never produce a commit; the `2f`-th does.
/// Commits from `2f` replicas never execute; the `2f+1`-th does.
pub fn check_replica_quorums(n: usize) {
    let b = Bench::new(n);
    let (pq, cq, _) = quorum_sizes(&b.cfg);
    let batch = Batch::new(3, None, vec![]);
    let mut r = b.replica(1);
    let out = r.step(&b.pre_prepare(&batch));
    assert!(sends(&out, MsgKind::Prepare));
    assert!(!sends(&out, MsgKind::Commit), "n={n}");

    for s in 0..pq - 1 {
        let out = r.step(&b.msg(s, MsgKind::Prepare, &batch, None));
        assert!(!sends(&out, MsgKind::Commit), "n={n}: commit after {} prepares", s + 1);
    }
    let out = r.step(&b.msg(pq - 1, MsgKind::Prepare, &batch, None));
    assert!(sends(&out, MsgKind::Commit), "n={n}: no commit after {pq} prepares");

    for s in 0..cq - 1 {
        let out = r.step(&b.msg(s, MsgKind::Commit, &batch, None));
        assert!(out.committed.is_empty(), "n={n}: executed after {} commits", s + 1);
    }
    let out = r.step(&b.msg(cq - 1, MsgKind::Commit, &batch, None));
    assert_eq!(out.committed, vec![(1, batch.digest())], "n={n}");
    assert_eq!(r.committed, vec![batch.digest()]);
}

/// `f` matching replies are not enough for the client; `f+1` are.
pub fn check_reply_quorum(n: usize) {
    let b = Bench::new(n);
    let (_, _, rq) = quorum_sizes(&b.cfg);
    let batch = Batch::new(3, Some(n as NodeId), vec![]);
    let mut c = ReplyCollector::new(b.cfg, b.dir.clone(), b.cache.clone());
    let root = Some(vec![7u8; 32]);
    for s in 0..rq - 1 {
        assert_eq!(c.on_reply(&b.msg(s, MsgKind::Reply, &batch, root.clone())), None, "n={n}");
        // Repeats from the same replica never count twice.
        assert_eq!(c.on_reply(&b.msg(s, MsgKind::Reply, &batch, root.clone())), None, "n={n}");
    }
    // A reply with a different result does not complete the quorum either.
    assert_eq!(c.on_reply(&b.msg(rq - 1, MsgKind::Reply, &batch, Some(vec![8u8; 32]))), None);
    assert_eq!(c.on_reply(&b.msg(rq, MsgKind::Reply, &batch, root)), Some(batch.digest()), "n={n}");
}

