//! Ledger records and transactions with their canonical encodings.
//!
//! Each signed record has a *body* (the fields counted in the size table:
//! 272 + |type| + |link| for orders, 304 for validations, 296 for challenges)
//! followed by an *envelope* carrying the signer key, timing fields and
//! scoping needed for replay. Identifiers hash the full encoding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_seq, encode_seq, Canonical, CodecError, Reader, Writer};
use crate::crypto::{hash, sign, verify_sig, Digest32, KeyPair, PublicKey, Signature256, SIGNATURE_LEN};
use crate::workload::Score;

pub const MICROS_PER_TOKEN: u64 = 1_000_000;
/// Largest token amount whose f64 wire form round-trips exactly.
pub const MAX_WIRE_MICROS: u64 = 1 << 51;

/// Token amount in millionths of a token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tokens(pub u64);

impl Tokens {
    pub const ZERO: Tokens = Tokens(0);

    pub fn from_micros(m: u64) -> Self {
        Tokens(m)
    }

    pub fn whole(t: u64) -> Self {
        Tokens(t * MICROS_PER_TOKEN)
    }

    /// Rounds to the nearest micro-token; `None` for negative, non-finite or
    /// out-of-range values.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() || v < 0.0 {
            return None;
        }
        let m = (v * MICROS_PER_TOKEN as f64).round();
        if m > MAX_WIRE_MICROS as f64 {
            return None;
        }
        Some(Tokens(m as u64))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_TOKEN as f64
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, o: Tokens) -> Option<Tokens> {
        self.0.checked_add(o.0).map(Tokens)
    }

    pub fn checked_sub(self, o: Tokens) -> Option<Tokens> {
        self.0.checked_sub(o.0).map(Tokens)
    }

    pub fn saturating_sub(self, o: Tokens) -> Tokens {
        Tokens(self.0.saturating_sub(o.0))
    }

    /// `floor(self * bps / 10_000)`
    pub fn mul_bps(self, bps: u64) -> Tokens {
        Tokens((self.0 as u128 * bps as u128 / 10_000) as u64)
    }

    /// `floor(self * num / den)`; `den` must be non-zero.
    pub fn mul_div(self, num: u64, den: u64) -> Tokens {
        Tokens((self.0 as u128 * num as u128 / den as u128) as u64)
    }

    fn put(self, w: &mut Writer) {
        w.put_f64(self.as_f64());
    }

    fn get(r: &mut Reader<'_>) -> Result<Tokens, CodecError> {
        let v = r.f64()?;
        let t = Tokens::from_f64(v).ok_or(CodecError::Invalid("token amount"))?;
        if t.as_f64().to_bits() != v.to_bits() {
            return Err(CodecError::Invalid("token amount not canonical"));
        }
        Ok(t)
    }
}

impl std::ops::Add for Tokens {
    type Output = Tokens;
    fn add(self, o: Tokens) -> Tokens {
        Tokens(self.0.checked_add(o.0).expect("token overflow"))
    }
}

impl std::ops::AddAssign for Tokens {
    fn add_assign(&mut self, o: Tokens) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Tokens {
    fn sum<I: Iterator<Item = Tokens>>(iter: I) -> Tokens {
        iter.fold(Tokens::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Tokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / MICROS_PER_TOKEN, self.0 % MICROS_PER_TOKEN)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Aggregator,
    Miner,
    Validator,
    Verifier,
    Client,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Aggregator, Role::Miner, Role::Validator, Role::Verifier, Role::Client];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Aggregator => "aggregator",
            Role::Miner => "miner",
            Role::Validator => "validator",
            Role::Verifier => "verifier",
            Role::Client => "client",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleSet(pub u8);

impl RoleSet {
    pub fn of(roles: &[Role]) -> Self {
        RoleSet(roles.iter().fold(0, |acc, r| acc | r.bit()))
    }

    pub fn contains(self, r: Role) -> bool {
        self.0 & r.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Role> {
        Role::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    fn valid(self) -> bool {
        self.0 < (1 << Role::ALL.len())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("field {0} exceeds 65535 bytes")]
    FieldTooLong(&'static str),
}

fn check_len(s: &str, field: &'static str) -> Result<(), RecordError> {
    if s.len() > u16::MAX as usize {
        return Err(RecordError::FieldTooLong(field));
    }
    Ok(())
}

// ---------------------------------------------------------------- orders

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Order {
    pub reward: Tokens,
    pub workload_type: String,
    pub t0: u64,
    pub link: String,
    pub sig: Signature256,
    pub client_pk: PublicKey,
    pub dt_train: u64,
    pub dt_validate: u64,
    pub dt_challenge: u64,
}

/// Unsigned order fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderTemplate {
    pub reward: Tokens,
    pub workload_type: String,
    pub t0: u64,
    pub dt_train: u64,
    pub dt_validate: u64,
    pub dt_challenge: u64,
    pub link: String,
}

impl OrderTemplate {
    pub fn sign(self, client: &KeyPair) -> Result<Order, RecordError> {
        check_len(&self.workload_type, "workload_type")?;
        check_len(&self.link, "link")?;
        let mut o = Order {
            reward: self.reward,
            workload_type: self.workload_type,
            t0: self.t0,
            link: self.link,
            sig: Signature256::ZERO,
            client_pk: client.public_key(),
            dt_train: self.dt_train,
            dt_validate: self.dt_validate,
            dt_challenge: self.dt_challenge,
        };
        o.sig = sign(client, &o.preimage());
        Ok(o)
    }
}

impl Order {
    /// Size counted by the record-size table (length prefixes excluded).
    pub fn table_size(&self) -> usize {
        272 + self.workload_type.len() + self.link.len()
    }

    pub fn preimage(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"pot/order");
        self.reward.put(&mut w);
        w.put_str16(&self.workload_type);
        w.put_u64(self.t0);
        w.put_str16(&self.link);
        w.put_pk(&self.client_pk);
        w.put_u64(self.dt_train);
        w.put_u64(self.dt_validate);
        w.put_u64(self.dt_challenge);
        w.into_bytes()
    }

    pub fn verify(&self) -> bool {
        verify_sig(&self.client_pk, &self.sig, &self.preimage())
    }

    pub fn oid(&self) -> Digest32 {
        hash(&self.to_bytes())
    }

    pub fn train_end(&self) -> u64 {
        self.t0.saturating_add(self.dt_train)
    }

    pub fn fields_valid(&self) -> bool {
        !self.reward.is_zero() && self.dt_train > 0 && self.dt_validate > 0 && self.dt_challenge > 0
    }
}

impl Canonical for Order {
    fn encode(&self, w: &mut Writer) {
        self.reward.put(w);
        w.put_str16(&self.workload_type);
        w.put_u64(self.t0);
        w.put_str16(&self.link);
        w.put_sig(&self.sig);
        w.put_pk(&self.client_pk);
        w.put_u64(self.dt_train);
        w.put_u64(self.dt_validate);
        w.put_u64(self.dt_challenge);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Order {
            reward: Tokens::get(r)?,
            workload_type: r.str16()?,
            t0: r.u64()?,
            link: r.str16()?,
            sig: r.sig()?,
            client_pk: r.pk()?,
            dt_train: r.u64()?,
            dt_validate: r.u64()?,
            dt_challenge: r.u64()?,
        })
    }
}

// ---------------------------------------------------------------- models and claims

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelBlob {
    pub mid: Digest32,
    pub payload: Vec<u8>,
}

impl ModelBlob {
    pub fn new(payload: Vec<u8>) -> Self {
        ModelBlob { mid: hash(&payload), payload }
    }
}

impl Canonical for ModelBlob {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.mid);
        w.put_bytes32(&self.payload);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let mid = r.digest()?;
        let payload = r.bytes32()?;
        if hash(&payload) != mid {
            return Err(CodecError::Invalid("mid does not match payload"));
        }
        Ok(ModelBlob { mid, payload })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reveal {
    pub model: ModelBlob,
    pub time: u64,
}

/// A miner's commitment to a model for one order, and later its reveal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Claim {
    pub oid: Digest32,
    pub miner_pk: PublicKey,
    /// Signature over the model payload: the commitment.
    pub model_sig: Signature256,
    pub commit_time: u64,
    /// Signature over the other commit fields, so a commitment cannot be
    /// replayed by someone else under a different time.
    pub auth: Signature256,
    pub reveal: Option<Reveal>,
}

impl Claim {
    pub fn commit(oid: Digest32, model_payload: &[u8], miner: &KeyPair, commit_time: u64) -> Claim {
        let mut c = Claim {
            oid,
            miner_pk: miner.public_key(),
            model_sig: sign(miner, model_payload),
            commit_time,
            auth: Signature256::ZERO,
            reveal: None,
        };
        c.auth = sign(miner, &c.auth_preimage());
        c
    }

    pub fn auth_preimage(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"pot/claim");
        w.put_digest(&self.oid);
        w.put_pk(&self.miner_pk);
        w.put_sig(&self.model_sig);
        w.put_u64(self.commit_time);
        w.into_bytes()
    }

    pub fn verify_auth(&self) -> bool {
        verify_sig(&self.miner_pk, &self.auth, &self.auth_preimage())
    }

    /// Does `payload` match the committed signature?
    pub fn binds(&self, payload: &[u8]) -> bool {
        verify_sig(&self.miner_pk, &self.model_sig, payload)
    }

    pub fn mid(&self) -> Option<Digest32> {
        self.reveal.as_ref().map(|r| r.model.mid)
    }

    pub fn is_revealed(&self) -> bool {
        self.reveal.is_some()
    }
}

impl Canonical for Claim {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.oid);
        w.put_pk(&self.miner_pk);
        w.put_sig(&self.model_sig);
        w.put_u64(self.commit_time);
        w.put_sig(&self.auth);
        match &self.reveal {
            None => w.put_u8(0),
            Some(rv) => {
                w.put_u8(1);
                rv.model.encode(w);
                w.put_u64(rv.time);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let oid = r.digest()?;
        let miner_pk = r.pk()?;
        let model_sig = r.sig()?;
        let commit_time = r.u64()?;
        let auth = r.sig()?;
        let reveal = match r.u8()? {
            0 => None,
            1 => Some(Reveal { model: ModelBlob::decode(r)?, time: r.u64()? }),
            tag => return Err(CodecError::InvalidTag { what: "reveal", tag }),
        };
        Ok(Claim { oid, miner_pk, model_sig, commit_time, auth, reveal })
    }
}

/// Publication of a committed model. Needs no extra signature: the
/// commitment already binds the payload to the miner.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RevealTx {
    pub oid: Digest32,
    pub miner_pk: PublicKey,
    pub model: ModelBlob,
}

impl Canonical for RevealTx {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.oid);
        w.put_pk(&self.miner_pk);
        self.model.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(RevealTx { oid: r.digest()?, miner_pk: r.pk()?, model: ModelBlob::decode(r)? })
    }
}

// ---------------------------------------------------------------- validations and challenges

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Validation {
    pub mid: Digest32,
    pub score: Score,
    pub v_stake: Tokens,
    pub sig: Signature256,
    pub validator_pk: PublicKey,
    /// Order the score was computed for; the test target is per order.
    pub oid: Digest32,
    pub sig_time: u64,
    pub message_time: u64,
}

impl Validation {
    pub const TABLE_SIZE: usize = 304;

    #[allow(clippy::too_many_arguments)]
    pub fn signed(
        validator: &KeyPair,
        oid: Digest32,
        mid: Digest32,
        score: Score,
        v_stake: Tokens,
        sig_time: u64,
        message_time: u64,
    ) -> Validation {
        let mut v = Validation {
            mid,
            score,
            v_stake,
            sig: Signature256::ZERO,
            validator_pk: validator.public_key(),
            oid,
            sig_time,
            message_time,
        };
        v.sig = sign(validator, &v.preimage());
        v
    }

    pub fn preimage(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"pot/validation");
        w.put_digest(&self.mid);
        w.put_u64(self.score.0);
        self.v_stake.put(&mut w);
        w.put_pk(&self.validator_pk);
        w.put_digest(&self.oid);
        w.put_u64(self.sig_time);
        w.put_u64(self.message_time);
        w.into_bytes()
    }

    pub fn verify(&self) -> bool {
        verify_sig(&self.validator_pk, &self.sig, &self.preimage())
    }

    pub fn vid(&self) -> Digest32 {
        hash(&self.to_bytes())
    }
}

impl Canonical for Validation {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.mid);
        w.put_u64(self.score.0);
        self.v_stake.put(w);
        w.put_sig(&self.sig);
        w.put_pk(&self.validator_pk);
        w.put_digest(&self.oid);
        w.put_u64(self.sig_time);
        w.put_u64(self.message_time);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Validation {
            mid: r.digest()?,
            score: Score(r.u64()?),
            v_stake: Tokens::get(r)?,
            sig: r.sig()?,
            validator_pk: r.pk()?,
            oid: r.digest()?,
            sig_time: r.u64()?,
            message_time: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Challenge {
    pub vid: Digest32,
    pub c_stake: Tokens,
    pub sig: Signature256,
    pub challenger_pk: PublicKey,
    pub sig_time: u64,
    pub message_time: u64,
}

impl Challenge {
    pub const TABLE_SIZE: usize = 296;

    pub fn signed(challenger: &KeyPair, vid: Digest32, c_stake: Tokens, sig_time: u64, message_time: u64) -> Challenge {
        let mut c = Challenge {
            vid,
            c_stake,
            sig: Signature256::ZERO,
            challenger_pk: challenger.public_key(),
            sig_time,
            message_time,
        };
        c.sig = sign(challenger, &c.preimage());
        c
    }

    pub fn preimage(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"pot/challenge");
        w.put_digest(&self.vid);
        self.c_stake.put(&mut w);
        w.put_pk(&self.challenger_pk);
        w.put_u64(self.sig_time);
        w.put_u64(self.message_time);
        w.into_bytes()
    }

    pub fn verify(&self) -> bool {
        verify_sig(&self.challenger_pk, &self.sig, &self.preimage())
    }

    pub fn id(&self) -> Digest32 {
        hash(&self.to_bytes())
    }
}

impl Canonical for Challenge {
    fn encode(&self, w: &mut Writer) {
        w.put_digest(&self.vid);
        self.c_stake.put(w);
        w.put_sig(&self.sig);
        w.put_pk(&self.challenger_pk);
        w.put_u64(self.sig_time);
        w.put_u64(self.message_time);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Challenge {
            vid: r.digest()?,
            c_stake: Tokens::get(r)?,
            sig: r.sig()?,
            challenger_pk: r.pk()?,
            sig_time: r.u64()?,
            message_time: r.u64()?,
        })
    }
}

// ---------------------------------------------------------------- membership and housekeeping

/// Generic signed housekeeping message: a tag-specific body plus signer.
macro_rules! signed_record {
    (
        $(#[$meta:meta])*
        $name:ident, $tag:literal, signer: $signer:ident, { $($field:ident : $ty:ty => $put:ident / $get:ident),* $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub struct $name {
            $(pub $field: $ty,)*
            pub $signer: PublicKey,
            pub sig: Signature256,
        }

        impl $name {
            pub fn signed(kp: &KeyPair, $($field: $ty),*) -> Self {
                let mut v = $name { $($field,)* $signer: kp.public_key(), sig: Signature256::ZERO };
                v.sig = sign(kp, &v.preimage());
                v
            }

            pub fn preimage(&self) -> Vec<u8> {
                let mut w = Writer::new();
                w.put_raw($tag);
                $( field_io!(put $put, w, self.$field); )*
                w.put_pk(&self.$signer);
                w.into_bytes()
            }

            pub fn verify(&self) -> bool {
                verify_sig(&self.$signer, &self.sig, &self.preimage())
            }
        }

        impl Canonical for $name {
            fn encode(&self, w: &mut Writer) {
                $( field_io!(put $put, *w, self.$field); )*
                w.put_pk(&self.$signer);
                w.put_sig(&self.sig);
            }

            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                Ok($name {
                    $($field: field_io!(get $get, r),)*
                    $signer: r.pk()?,
                    sig: r.sig()?,
                })
            }
        }
    };
}

macro_rules! field_io {
    (put u64, $w:expr, $v:expr) => { $w.put_u64($v) };
    (put bool, $w:expr, $v:expr) => { $w.put_bool($v) };
    (put digest, $w:expr, $v:expr) => { $w.put_digest(&$v) };
    (put tokens, $w:expr, $v:expr) => { $v.put(&mut $w) };
    (put roles, $w:expr, $v:expr) => { $w.put_u8($v.0) };
    (get u64, $r:expr) => { $r.u64()? };
    (get bool, $r:expr) => { $r.bool()? };
    (get digest, $r:expr) => { $r.digest()? };
    (get tokens, $r:expr) => { Tokens::get($r)? };
    (get roles, $r:expr) => {{
        let rs = RoleSet($r.u8()?);
        if !rs.valid() {
            return Err(CodecError::Invalid("role set"));
        }
        rs
    }};
}

signed_record!(
    /// Stake a deposit and join with the given roles.
    Register, b"pot/register", signer: pk, {
        roles: RoleSet => roles / roles,
        deposit: Tokens => tokens / tokens,
        nonce: u64 => u64 / u64,
    }
);

signed_record!(
    /// Leave and withdraw the stake.
    Unregister, b"pot/unregister", signer: pk, {
        nonce: u64 => u64 / u64,
    }
);

signed_record!(
    /// Client claims the winning model cannot be retrieved.
    Report, b"pot/report", signer: client_pk, {
        oid: Digest32 => digest / digest,
    }
);

signed_record!(
    /// A registered node's vote on an irretrievability report.
    Vote, b"pot/vote", signer: voter_pk, {
        oid: Digest32 => digest / digest,
        support: bool => bool / bool,
    }
);

signed_record!(
    /// Client confirms it fetched the winning model.
    Delivered, b"pot/delivered", signer: client_pk, {
        oid: Digest32 => digest / digest,
    }
);

signed_record!(
    /// Aggregator notice that an order's payouts executed on chain.
    Settled, b"pot/settled", signer: aggregator_pk, {
        oid: Digest32 => digest / digest,
    }
);

// ---------------------------------------------------------------- transactions and batches

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tx {
    Register(Register),
    Unregister(Unregister),
    Order(Order),
    Commit(Claim),
    Reveal(RevealTx),
    Validation(Validation),
    Challenge(Challenge),
    Report(Report),
    Vote(Vote),
    Delivered(Delivered),
    Settled(Settled),
}

impl Tx {
    pub fn kind(&self) -> &'static str {
        match self {
            Tx::Register(_) => "register",
            Tx::Unregister(_) => "unregister",
            Tx::Order(_) => "order",
            Tx::Commit(_) => "commit",
            Tx::Reveal(_) => "reveal",
            Tx::Validation(_) => "validation",
            Tx::Challenge(_) => "challenge",
            Tx::Report(_) => "report",
            Tx::Vote(_) => "vote",
            Tx::Delivered(_) => "delivered",
            Tx::Settled(_) => "settled",
        }
    }

    pub fn digest(&self) -> Digest32 {
        hash(&self.to_bytes())
    }

    pub fn sender(&self) -> PublicKey {
        match self {
            Tx::Register(t) => t.pk,
            Tx::Unregister(t) => t.pk,
            Tx::Order(t) => t.client_pk,
            Tx::Commit(t) => t.miner_pk,
            Tx::Reveal(t) => t.miner_pk,
            Tx::Validation(t) => t.validator_pk,
            Tx::Challenge(t) => t.challenger_pk,
            Tx::Report(t) => t.client_pk,
            Tx::Vote(t) => t.voter_pk,
            Tx::Delivered(t) => t.client_pk,
            Tx::Settled(t) => t.aggregator_pk,
        }
    }
}

impl Canonical for Tx {
    fn encode(&self, w: &mut Writer) {
        match self {
            Tx::Register(t) => { w.put_u8(0); t.encode(w) }
            Tx::Unregister(t) => { w.put_u8(1); t.encode(w) }
            Tx::Order(t) => { w.put_u8(2); t.encode(w) }
            Tx::Commit(t) => { w.put_u8(3); t.encode(w) }
            Tx::Reveal(t) => { w.put_u8(4); t.encode(w) }
            Tx::Validation(t) => { w.put_u8(5); t.encode(w) }
            Tx::Challenge(t) => { w.put_u8(6); t.encode(w) }
            Tx::Report(t) => { w.put_u8(7); t.encode(w) }
            Tx::Vote(t) => { w.put_u8(8); t.encode(w) }
            Tx::Delivered(t) => { w.put_u8(9); t.encode(w) }
            Tx::Settled(t) => { w.put_u8(10); t.encode(w) }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match r.u8()? {
            0 => Tx::Register(Register::decode(r)?),
            1 => Tx::Unregister(Unregister::decode(r)?),
            2 => Tx::Order(Order::decode(r)?),
            3 => {
                let c = Claim::decode(r)?;
                if c.reveal.is_some() {
                    return Err(CodecError::Invalid("commit carries a reveal"));
                }
                Tx::Commit(c)
            }
            4 => Tx::Reveal(RevealTx::decode(r)?),
            5 => Tx::Validation(Validation::decode(r)?),
            6 => Tx::Challenge(Challenge::decode(r)?),
            7 => Tx::Report(Report::decode(r)?),
            8 => Tx::Vote(Vote::decode(r)?),
            9 => Tx::Delivered(Delivered::decode(r)?),
            10 => Tx::Settled(Settled::decode(r)?),
            tag => return Err(CodecError::InvalidTag { what: "tx", tag }),
        })
    }
}

/// An ordered group of transactions applied at one ledger timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Batch {
    pub timestamp: u64,
    /// Node that submitted the batch and receives replies.
    pub origin: Option<u32>,
    pub txs: Vec<Tx>,
}

impl Batch {
    pub fn new(timestamp: u64, origin: Option<u32>, txs: Vec<Tx>) -> Self {
        Batch { timestamp, origin, txs }
    }

    pub fn digest(&self) -> Digest32 {
        hash(&self.to_bytes())
    }
}

impl Canonical for Batch {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.timestamp);
        match self.origin {
            None => w.put_u8(0),
            Some(o) => {
                w.put_u8(1);
                w.put_u32(o);
            }
        }
        encode_seq(w, &self.txs);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let timestamp = r.u64()?;
        let origin = match r.u8()? {
            0 => None,
            1 => Some(r.u32()?),
            tag => return Err(CodecError::InvalidTag { what: "origin", tag }),
        };
        Ok(Batch { timestamp, origin, txs: decode_seq(r)? })
    }
}

/// Length of the fixed signature field, re-exported for size accounting.
pub const SIG_BYTES: usize = SIGNATURE_LEN;
