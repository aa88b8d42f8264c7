//! The proof-of-training state machine: timing windows, commit/reveal,
//! validation, verification and reward finalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::Canonical;
use crate::crypto::{Digest32, KeyPair, PublicKey};
use crate::records::{Challenge, Claim, ModelBlob, Order, Reveal, Role, Tokens, Validation};
use crate::workload::{vrf_model, Score, TaskSpec, ToyModel, WorkloadError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Training,
    Validation,
    Challenge,
    Finalized,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Validation => "validation",
            Phase::Challenge => "challenge",
            Phase::Finalized => "finalized",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Phase> {
        [Phase::Training, Phase::Validation, Phase::Challenge, Phase::Finalized]
            .get(c as usize)
            .copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseWindows {
    pub t0: u64,
    pub t3: u64,
    pub train_end: u64,
    pub validate_end: u64,
    pub challenge_end: u64,
}

impl PhaseWindows {
    /// Test data is released the moment training closes.
    pub fn new(t0: u64, dt_train: u64, dt_validate: u64, dt_challenge: u64) -> Self {
        let train_end = t0.saturating_add(dt_train);
        let t3 = train_end;
        let validate_end = t3.saturating_add(dt_validate);
        PhaseWindows { t0, t3, train_end, validate_end, challenge_end: validate_end.saturating_add(dt_challenge) }
    }

    pub fn of(order: &Order) -> Self {
        PhaseWindows::new(order.t0, order.dt_train, order.dt_validate, order.dt_challenge)
    }

    pub fn is_valid(&self) -> bool {
        self.t0 < self.train_end
            && self.train_end <= self.t3
            && self.t3 < self.validate_end
            && self.validate_end < self.challenge_end
    }

    pub fn commit_open(&self, now: u64) -> bool {
        self.t0 <= now && now < self.train_end
    }

    pub fn reveal_open(&self, now: u64) -> bool {
        self.train_end < now && now <= self.validate_end
    }

    pub fn validate_open(&self, now: u64) -> bool {
        self.t3 < now && now <= self.validate_end
    }

    /// A challenge must follow the validation it targets and close with the
    /// challenge window.
    pub fn challenge_open(&self, validation_time: u64, now: u64) -> bool {
        validation_time < now && now <= self.challenge_end
    }
}

pub fn phase_of(w: &PhaseWindows, now: u64) -> Phase {
    if now < w.train_end {
        Phase::Training
    } else if now <= w.validate_end {
        Phase::Validation
    } else if now <= w.challenge_end {
        Phase::Challenge
    } else {
        Phase::Finalized
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone)]
pub enum ProtocolError {
    #[error("time window closed")]
    WindowClosed,
    #[error("sender is not registered for this role")]
    NotRegistered,
    #[error("revealed model does not match the committed signature")]
    SignatureMismatch,
    #[error("reveal before training closed")]
    TooEarly,
    #[error("action not allowed in the current phase")]
    WrongPhase,
    #[error("insufficient stake")]
    InsufficientStake,
    #[error("model not available")]
    ModelUnavailable,
    #[error("no validated models")]
    NoValidModels,
    #[error("order and claim disagree")]
    OrderMismatch,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Read access to membership and stake, implemented by the ledger.
pub trait Registry {
    fn has_role(&self, pk: &PublicKey, role: Role) -> bool;
    fn stake_of(&self, pk: &PublicKey) -> Tokens;
}

pub fn pot_claim_commit(
    order: &Order,
    model: &ToyModel,
    miner: &KeyPair,
    registry: &impl Registry,
    now: u64,
) -> Result<Claim, ProtocolError> {
    if !registry.has_role(&miner.public_key(), Role::Miner) {
        return Err(ProtocolError::NotRegistered);
    }
    if !PhaseWindows::of(order).commit_open(now) {
        return Err(ProtocolError::WindowClosed);
    }
    Ok(Claim::commit(order.oid(), &model.to_bytes(), miner, now))
}

pub fn pot_claim_reveal(claim: &Claim, model: &ToyModel, windows: &PhaseWindows, now: u64) -> Result<Claim, ProtocolError> {
    if now <= windows.train_end {
        return Err(ProtocolError::TooEarly);
    }
    if now > windows.validate_end {
        return Err(ProtocolError::WindowClosed);
    }
    let payload = model.to_bytes();
    if !claim.binds(&payload) {
        return Err(ProtocolError::SignatureMismatch);
    }
    let mut out = claim.clone();
    out.reveal = Some(Reveal { model: ModelBlob::new(payload), time: now });
    Ok(out)
}

/// Scores a revealed model blob against the task.
pub fn score_blob(blob: &ModelBlob, spec: &TaskSpec) -> Result<Score, ProtocolError> {
    let model = ToyModel::from_bytes(&blob.payload).map_err(|_| ProtocolError::ModelUnavailable)?;
    Ok(vrf_model(&model, spec)?)
}

pub fn pot_validate(
    claim: &Claim,
    spec: &TaskSpec,
    validator: &KeyPair,
    v_stake: Tokens,
    registry: &impl Registry,
    windows: &PhaseWindows,
    now: u64,
) -> Result<Validation, ProtocolError> {
    if !windows.validate_open(now) {
        return Err(ProtocolError::WrongPhase);
    }
    let pk = validator.public_key();
    if !registry.has_role(&pk, Role::Validator) {
        return Err(ProtocolError::NotRegistered);
    }
    if v_stake.is_zero() || registry.stake_of(&pk) < v_stake {
        return Err(ProtocolError::InsufficientStake);
    }
    let reveal = claim.reveal.as_ref().ok_or(ProtocolError::ModelUnavailable)?;
    let score = score_blob(&reveal.model, spec)?;
    Ok(Validation::signed(validator, claim.oid, reveal.model.mid, score, v_stake, now, now))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub correct: bool,
    pub challenge: Option<Challenge>,
}

/// Recomputes the validated score. On mismatch, builds a challenge signed
/// by `verifier` staking `c_stake`.
pub fn pot_verify(
    validation: &Validation,
    spec: &TaskSpec,
    model: Option<&ModelBlob>,
    verifier: &KeyPair,
    c_stake: Tokens,
    windows: &PhaseWindows,
    now: u64,
) -> Result<VerifyOutcome, ProtocolError> {
    let blob = model.filter(|b| b.mid == validation.mid).ok_or(ProtocolError::ModelUnavailable)?;
    let truth = score_blob(blob, spec)?;
    if truth == validation.score {
        return Ok(VerifyOutcome { correct: true, challenge: None });
    }
    if !windows.challenge_open(validation.message_time, now) {
        return Err(ProtocolError::WindowClosed);
    }
    let ch = Challenge::signed(verifier, validation.vid(), c_stake, now, now);
    Ok(VerifyOutcome { correct: false, challenge: Some(ch) })
}

// ---------------------------------------------------------------- finalize

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitParams {
    pub tax_bps: u64,
    pub validator_share_bps: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams { tax_bps: 200, validator_share_bps: 1800 }
    }
}

/// One surviving validation of a candidate model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoredVote {
    pub validator: PublicKey,
    pub score: Score,
    pub stake: Tokens,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub mid: Digest32,
    pub miner: PublicKey,
    pub commit_time: u64,
    pub votes: Vec<ScoredVote>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeResult {
    pub optimum_mid: Digest32,
    pub winner_pk: PublicKey,
    pub score: Score,
    pub winning_validators: Vec<PublicKey>,
    pub payouts: BTreeMap<PublicKey, Tokens>,
    pub winner_share: Tokens,
    pub tax: Tokens,
}

impl FinalizeResult {
    pub fn payout_total(&self) -> Tokens {
        self.payouts.values().copied().sum()
    }
}

/// Score adopted for a model: the stake-weighted plurality of its votes,
/// ties going to the lower score.
pub fn adopted_score(votes: &[ScoredVote]) -> Option<Score> {
    let mut weight: BTreeMap<Score, u128> = BTreeMap::new();
    for v in votes {
        *weight.entry(v.score).or_default() += v.stake.0 as u128;
    }
    let mut best: Option<(Score, u128)> = None;
    for (s, w) in weight {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((s, w));
        }
    }
    best.map(|(s, _)| s)
}

/// Picks the optimum model and splits the reward.
pub fn finalize_candidates(
    reward: Tokens,
    candidates: &[Candidate],
    split: &SplitParams,
) -> Result<FinalizeResult, ProtocolError> {
    let mut best: Option<(&Candidate, Score)> = None;
    for c in candidates {
        let Some(score) = adopted_score(&c.votes) else { continue };
        let better = match best {
            None => true,
            Some((b, bs)) => {
                (score, std::cmp::Reverse(c.commit_time), std::cmp::Reverse(c.mid), std::cmp::Reverse(c.miner))
                    > (bs, std::cmp::Reverse(b.commit_time), std::cmp::Reverse(b.mid), std::cmp::Reverse(b.miner))
            }
        };
        if better {
            best = Some((c, score));
        }
    }
    let (win, score) = best.ok_or(ProtocolError::NoValidModels)?;

    let tax = reward.mul_bps(split.tax_bps);
    let pool = reward.mul_bps(split.validator_share_bps);
    let agreeing: Vec<&ScoredVote> = win.votes.iter().filter(|v| v.score == score).collect();
    let total_stake: u64 = agreeing.iter().map(|v| v.stake.0).sum();

    let mut payouts: BTreeMap<PublicKey, Tokens> = BTreeMap::new();
    let mut paid = Tokens::ZERO;
    for v in &agreeing {
        let share = pool.mul_div(v.stake.0, total_stake);
        *payouts.entry(v.validator).or_default() += share;
        paid += share;
    }
    let winner_share = Tokens(reward.0 - tax.0 - paid.0);
    *payouts.entry(win.miner).or_default() += winner_share;

    Ok(FinalizeResult {
        optimum_mid: win.mid,
        winner_pk: win.miner,
        score,
        winning_validators: agreeing.iter().map(|v| v.validator).collect(),
        payouts,
        winner_share,
        tax,
    })
}
