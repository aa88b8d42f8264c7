//! Stakes, escrow, slashing, payouts and on-chain settlement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::crypto::{hash_parts, sign, verify_sig, Digest32, KeyPair, PublicKey, Signature256};
use crate::protocol::SplitParams;
use crate::records::{Role, RoleSet, Tokens};

#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone)]
pub enum EconError {
    #[error("deposit {deposit} below minimum {minimum}")]
    BelowMinimum { deposit: Tokens, minimum: Tokens },
    #[error("balance too low")]
    InsufficientBalance,
    #[error("stake too low")]
    InsufficientStake,
    #[error("already registered")]
    AlreadyRegistered,
    #[error("not registered")]
    NotRegistered,
    #[error("no escrow for order")]
    NoEscrow,
    #[error("escrow already exists for order")]
    DuplicateEscrow,
    #[error("no pending payout for order")]
    NoPending,
    #[error("aggregator already signed")]
    DuplicateSigner,
    #[error("signer is not an aggregator")]
    NotAggregator,
    #[error("settlement already executed")]
    AlreadyExecuted,
    #[error("bad settlement signature")]
    BadSignature,
    #[error("invalid multisig threshold")]
    BadThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinStakes {
    pub aggregator: Tokens,
    pub miner: Tokens,
    pub validator: Tokens,
    pub verifier: Tokens,
}

impl Default for MinStakes {
    fn default() -> Self {
        MinStakes {
            aggregator: Tokens::whole(1000),
            miner: Tokens::whole(100),
            validator: Tokens::whole(100),
            verifier: Tokens::whole(10),
        }
    }
}

impl MinStakes {
    pub fn for_role(&self, r: Role) -> Tokens {
        match r {
            Role::Aggregator => self.aggregator,
            Role::Miner => self.miner,
            Role::Validator => self.validator,
            Role::Verifier => self.verifier,
            Role::Client => Tokens::ZERO,
        }
    }

    /// One stake backs every role a node holds, so the strictest minimum applies.
    pub fn for_roles(&self, rs: RoleSet) -> Tokens {
        rs.iter().map(|r| self.for_role(r)).max().unwrap_or(Tokens::ZERO)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeEntry {
    pub amount: Tokens,
    pub locked: bool,
    pub flagged: bool,
}

/// Payouts decided for an order but not yet settled on chain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPayout {
    pub payouts: BTreeMap<PublicKey, Tokens>,
    pub tax: Tokens,
}

impl PendingPayout {
    pub fn total(&self) -> Tokens {
        self.payouts.values().copied().sum::<Tokens>() + self.tax
    }

    /// Account credits for settlement: payouts plus an equal tax share per
    /// aggregator. The second value is the indivisible tax remainder, which
    /// goes to the treasury.
    pub fn credits(&self, aggregators: &[PublicKey]) -> (Vec<(PublicKey, Tokens)>, Tokens) {
        let mut credits: Vec<(PublicKey, Tokens)> =
            self.payouts.iter().filter(|(_, t)| !t.is_zero()).map(|(p, t)| (*p, *t)).collect();
        if aggregators.is_empty() {
            return (credits, self.tax);
        }
        let n = aggregators.len() as u64;
        let each = Tokens(self.tax.0 / n);
        if !each.is_zero() {
            credits.extend(aggregators.iter().map(|a| (*a, each)));
        }
        (credits, Tokens(self.tax.0 - each.0 * n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlashReceipt {
    pub slashed: Tokens,
    pub to_beneficiary: Tokens,
    pub to_treasury: Tokens,
    /// The stake could not cover the requested amount.
    pub shortfall: Tokens,
}

/// Token accounting. Every operation except [`StakeBook::faucet`] conserves
/// [`StakeBook::total`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeBook {
    pub balances: BTreeMap<PublicKey, Tokens>,
    pub stakes: BTreeMap<PublicKey, StakeEntry>,
    pub escrow: BTreeMap<Digest32, Tokens>,
    pub pending: BTreeMap<Digest32, PendingPayout>,
    pub treasury: Tokens,
}

impl StakeBook {
    pub fn total(&self) -> Tokens {
        self.balances.values().copied().sum::<Tokens>()
            + self.stakes.values().map(|s| s.amount).sum::<Tokens>()
            + self.escrow.values().copied().sum::<Tokens>()
            + self.pending.values().map(PendingPayout::total).sum::<Tokens>()
            + self.treasury
    }

    pub fn balance(&self, pk: &PublicKey) -> Tokens {
        self.balances.get(pk).copied().unwrap_or_default()
    }

    pub fn stake(&self, pk: &PublicKey) -> Tokens {
        self.stakes.get(pk).map(|s| s.amount).unwrap_or_default()
    }

    pub fn faucet(&mut self, pk: PublicKey, amount: Tokens) {
        *self.balances.entry(pk).or_default() += amount;
    }

    fn debit(&mut self, pk: &PublicKey, amount: Tokens) -> Result<(), EconError> {
        let bal = self.balances.get_mut(pk).ok_or(EconError::InsufficientBalance)?;
        *bal = bal.checked_sub(amount).ok_or(EconError::InsufficientBalance)?;
        if bal.is_zero() {
            self.balances.remove(pk);
        }
        Ok(())
    }

    fn credit(&mut self, pk: PublicKey, amount: Tokens) {
        if !amount.is_zero() {
            *self.balances.entry(pk).or_default() += amount;
        }
    }

    pub fn register(&mut self, pk: PublicKey, roles: RoleSet, deposit: Tokens, mins: &MinStakes) -> Result<(), EconError> {
        if self.stakes.contains_key(&pk) {
            return Err(EconError::AlreadyRegistered);
        }
        let minimum = mins.for_roles(roles);
        if deposit < minimum {
            return Err(EconError::BelowMinimum { deposit, minimum });
        }
        self.debit(&pk, deposit)?;
        self.stakes.insert(pk, StakeEntry { amount: deposit, locked: true, flagged: false });
        Ok(())
    }

    /// Returns the remaining stake to the free balance.
    pub fn unregister(&mut self, pk: &PublicKey) -> Result<Tokens, EconError> {
        let entry = self.stakes.remove(pk).ok_or(EconError::NotRegistered)?;
        self.credit(*pk, entry.amount);
        Ok(entry.amount)
    }

    pub fn escrow(&mut self, oid: Digest32, client: &PublicKey, amount: Tokens) -> Result<(), EconError> {
        if self.escrow.contains_key(&oid) {
            return Err(EconError::DuplicateEscrow);
        }
        self.debit(client, amount)?;
        self.escrow.insert(oid, amount);
        Ok(())
    }

    /// Takes `amount` from `offender`'s stake: half to `beneficiary` if any,
    /// the rest to the treasury. A stake smaller than `amount` is slashed to
    /// zero and the node is flagged.
    pub fn slash(&mut self, offender: &PublicKey, amount: Tokens, beneficiary: Option<PublicKey>) -> SlashReceipt {
        let Some(entry) = self.stakes.get_mut(offender) else {
            return SlashReceipt { slashed: Tokens::ZERO, to_beneficiary: Tokens::ZERO, to_treasury: Tokens::ZERO, shortfall: amount };
        };
        let slashed = amount.min(entry.amount);
        let shortfall = Tokens(amount.0 - slashed.0);
        entry.amount = Tokens(entry.amount.0 - slashed.0);
        if !shortfall.is_zero() || entry.amount.is_zero() {
            entry.flagged = true;
        }
        let to_beneficiary = match beneficiary {
            Some(_) => Tokens(slashed.0 / 2),
            None => Tokens::ZERO,
        };
        let to_treasury = Tokens(slashed.0 - to_beneficiary.0);
        if let Some(b) = beneficiary {
            self.credit(b, to_beneficiary);
        }
        self.treasury += to_treasury;
        SlashReceipt { slashed, to_beneficiary, to_treasury, shortfall }
    }

    /// Moves an order's escrow into a pending payout.
    pub fn seal(&mut self, oid: Digest32, payout: PendingPayout) -> Result<(), EconError> {
        let held = self.escrow.get(&oid).copied().ok_or(EconError::NoEscrow)?;
        assert_eq!(held, payout.total(), "payout must spend the escrow exactly");
        self.escrow.remove(&oid);
        self.pending.insert(oid, payout);
        Ok(())
    }

    /// Redirects `from`'s pending share to `to`.
    pub fn redirect(&mut self, oid: &Digest32, from: &PublicKey, to: PublicKey) -> Result<Tokens, EconError> {
        let p = self.pending.get_mut(oid).ok_or(EconError::NoPending)?;
        let amount = p.payouts.remove(from).unwrap_or_default();
        if !amount.is_zero() {
            *p.payouts.entry(to).or_default() += amount;
        }
        Ok(amount)
    }

    /// Credits a pending payout; see [`PendingPayout::credits`].
    pub fn settle(&mut self, oid: &Digest32, aggregators: &[PublicKey]) -> Result<Vec<(PublicKey, Tokens)>, EconError> {
        let p = self.pending.remove(oid).ok_or(EconError::NoPending)?;
        let (credits, remainder) = p.credits(aggregators);
        self.treasury += remainder;
        for (pk, t) in &credits {
            self.credit(*pk, *t);
        }
        Ok(credits)
    }
}

impl Canonical for StakeBook {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.balances.len() as u32);
        for (pk, t) in &self.balances {
            w.put_pk(pk);
            w.put_u64(t.0);
        }
        w.put_u32(self.stakes.len() as u32);
        for (pk, s) in &self.stakes {
            w.put_pk(pk);
            w.put_u64(s.amount.0);
            w.put_bool(s.locked);
            w.put_bool(s.flagged);
        }
        w.put_u32(self.escrow.len() as u32);
        for (oid, t) in &self.escrow {
            w.put_digest(oid);
            w.put_u64(t.0);
        }
        w.put_u32(self.pending.len() as u32);
        for (oid, p) in &self.pending {
            w.put_digest(oid);
            w.put_u32(p.payouts.len() as u32);
            for (pk, t) in &p.payouts {
                w.put_pk(pk);
                w.put_u64(t.0);
            }
            w.put_u64(p.tax.0);
        }
        w.put_u64(self.treasury.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let mut b = StakeBook::default();
        for _ in 0..r.u32()? {
            b.balances.insert(r.pk()?, Tokens(r.u64()?));
        }
        for _ in 0..r.u32()? {
            let pk = r.pk()?;
            let e = StakeEntry { amount: Tokens(r.u64()?), locked: r.bool()?, flagged: r.bool()? };
            b.stakes.insert(pk, e);
        }
        for _ in 0..r.u32()? {
            b.escrow.insert(r.digest()?, Tokens(r.u64()?));
        }
        for _ in 0..r.u32()? {
            let oid = r.digest()?;
            let mut p = PendingPayout::default();
            for _ in 0..r.u32()? {
                p.payouts.insert(r.pk()?, Tokens(r.u64()?));
            }
            p.tax = Tokens(r.u64()?);
            b.pending.insert(oid, p);
        }
        b.treasury = Tokens(r.u64()?);
        Ok(b)
    }
}

// ---------------------------------------------------------------- parameters

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconomicsParams {
    pub min_stakes: MinStakes,
    pub split: SplitParams,
    /// Supporting stake needed to uphold an irretrievability report.
    pub vote_threshold_bps: u64,
    /// Seconds a client has to confirm delivery before payouts are released.
    pub delivery_grace_s: u64,
    pub multisig_k: usize,
    pub gas: GasModel,
}

impl Default for EconomicsParams {
    fn default() -> Self {
        EconomicsParams {
            min_stakes: MinStakes::default(),
            split: SplitParams::default(),
            vote_threshold_bps: 5000,
            delivery_grace_s: 30,
            multisig_k: 3,
            gas: GasModel::default(),
        }
    }
}

// ---------------------------------------------------------------- gas model

pub const PROPOSE_GAS: u64 = 86_875;
pub const CONFIRM_GAS: u64 = 45_371;
pub const EXECUTE_GAS: u64 = 161_888;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub propose_gas: u64,
    pub confirm_gas: u64,
    pub execute_gas: u64,
    pub gas_price_gwei: f64,
    pub token_price_usd: f64,
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel {
            propose_gas: PROPOSE_GAS,
            confirm_gas: CONFIRM_GAS,
            execute_gas: EXECUTE_GAS,
            gas_price_gwei: 4.562,
            token_price_usd: 246.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub gas: u64,
    pub tokens: f64,
    pub usd: f64,
}

impl GasModel {
    pub fn cost_of(&self, gas: u64) -> Cost {
        let tokens = gas as f64 * self.gas_price_gwei * 1e-9;
        Cost { gas, tokens, usd: tokens * self.token_price_usd }
    }
}

/// Cost of one settlement: propose, `k` confirmations, execute.
pub fn settlement_cost(model: &GasModel, k: u64) -> Cost {
    model.cost_of(model.propose_gas + k * model.confirm_gas + model.execute_gas)
}

/// Budget needed to corrupt `k` aggregators each staking `d`.
pub fn attack_budget(d: Tokens, k: u64) -> Tokens {
    Tokens(d.0.checked_mul(k).expect("attack budget overflow"))
}

/// Fraction of supply an attacker needs when `staked_fraction` of supply is
/// spread evenly over `n` aggregators and `k` must be corrupted.
pub fn attack_supply_fraction(staked_fraction: f64, k: u64, n: u64) -> f64 {
    staked_fraction * k as f64 / n as f64
}

// ---------------------------------------------------------------- multisig settlement

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SettlementState {
    Proposed,
    Confirmed(usize),
    Executed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Receipt {
    pub oid: Digest32,
    pub account: PublicKey,
    pub tokens: Tokens,
    pub gas: u64,
    pub usd: f64,
}

/// Stand-in for the settlement chain: balances and a receipt log.
#[derive(Clone, Debug, Default)]
pub struct MockChain {
    pub balances: BTreeMap<PublicKey, Tokens>,
    pub receipts: Vec<Receipt>,
    pub total_gas: u64,
}

impl MockChain {
    pub fn balance(&self, pk: &PublicKey) -> Tokens {
        self.balances.get(pk).copied().unwrap_or_default()
    }

    pub fn receipts_csv(&self) -> String {
        let mut out = String::from("oid,account,tokens,gas,usd\n");
        for r in &self.receipts {
            let _ = writeln!(out, "{},{},{},{},{:.6}", r.oid, r.account, r.tokens, r.gas, r.usd);
        }
        out
    }
}

/// A k-of-n aggregator multisig paying out one sealed order.
#[derive(Clone, Debug)]
pub struct MultisigSettlement {
    pub k: usize,
    pub aggregators: Vec<PublicKey>,
    pub oid: Digest32,
    pub credits: Vec<(PublicKey, Tokens)>,
    pub digest: Digest32,
    signers: BTreeSet<PublicKey>,
    pub state: SettlementState,
}

impl MultisigSettlement {
    pub fn propose(k: usize, aggregators: Vec<PublicKey>, oid: Digest32, credits: Vec<(PublicKey, Tokens)>) -> Result<Self, EconError> {
        if k == 0 || k > aggregators.len() {
            return Err(EconError::BadThreshold);
        }
        let mut w = Writer::new();
        w.put_digest(&oid);
        for (pk, t) in &credits {
            w.put_pk(pk);
            w.put_u64(t.0);
        }
        let digest = hash_parts(&[b"pot/settlement", &w.into_bytes()]);
        Ok(MultisigSettlement {
            k,
            aggregators,
            oid,
            credits,
            digest,
            signers: BTreeSet::new(),
            state: SettlementState::Proposed,
        })
    }

    pub fn n(&self) -> usize {
        self.aggregators.len()
    }

    pub fn sign(&self, aggregator: &KeyPair) -> (PublicKey, Signature256) {
        (aggregator.public_key(), sign(aggregator, self.digest.as_bytes()))
    }

    pub fn confirmations(&self) -> usize {
        self.signers.len()
    }

    /// Records one confirmation; executes on the chain when the threshold is met.
    pub fn confirm(&mut self, signer: PublicKey, sig: &Signature256, chain: &mut MockChain, gas: &GasModel) -> Result<SettlementState, EconError> {
        if self.state == SettlementState::Executed {
            return Err(EconError::AlreadyExecuted);
        }
        if !self.aggregators.contains(&signer) {
            return Err(EconError::NotAggregator);
        }
        if self.signers.contains(&signer) {
            return Err(EconError::DuplicateSigner);
        }
        if !verify_sig(&signer, sig, self.digest.as_bytes()) {
            return Err(EconError::BadSignature);
        }
        self.signers.insert(signer);
        self.state = SettlementState::Confirmed(self.signers.len());
        if self.signers.len() >= self.k {
            self.execute(chain, gas);
        }
        Ok(self.state)
    }

    fn execute(&mut self, chain: &mut MockChain, gas: &GasModel) {
        let cost = settlement_cost(gas, self.k as u64);
        for (pk, t) in &self.credits {
            *chain.balances.entry(*pk).or_default() += *t;
            chain.receipts.push(Receipt { oid: self.oid, account: *pk, tokens: *t, gas: cost.gas, usd: cost.usd });
        }
        chain.total_gas += cost.gas;
        self.state = SettlementState::Executed;
    }
}

/// Applies a sequence of confirmations, stopping at the first error.
pub fn run_settlement(
    settlement: &mut MultisigSettlement,
    signatures: &[(PublicKey, Signature256)],
    chain: &mut MockChain,
    gas: &GasModel,
) -> Result<SettlementState, EconError> {
    let mut state = settlement.state;
    for (pk, sig) in signatures {
        state = settlement.confirm(*pk, sig, chain, gas)?;
    }
    Ok(state)
}
