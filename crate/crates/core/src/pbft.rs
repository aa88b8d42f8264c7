//! Three-phase PBFT among aggregator replicas as a pure message-in,
//! messages-out state machine.
//!
//! There is no view change. A replica that stalls while peers committed
//! (for instance after an equivocating primary) pulls a commit certificate
//! from them when the network goes idle; see [`Replica::on_idle`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use crate::codec::{decode_seq, encode_seq, Canonical, CodecError, Reader, Writer};
use crate::crypto::{hash, hash_parts, sign, verify_sig, Digest32, KeyPair, PublicKey, Signature256};
use crate::ledger::{BatchReport, GlobalLedger};
use crate::records::Batch;

pub type NodeId = u32;

/// How far ahead of the last executed sequence a pre-prepare may be.
pub const WATERMARK: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub n: usize,
    pub f: usize,
    pub primary: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("n must be at least 3f+1 (n={n}, f={f})")]
    TooFewNodes { n: usize, f: usize },
    #[error("primary index {0} out of range")]
    BadPrimary(usize),
}

impl ConsensusConfig {
    pub fn new(n: usize) -> Self {
        ConsensusConfig { n, f: n.saturating_sub(1) / 3, primary: 0 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n < 3 * self.f + 1 {
            return Err(ConfigError::TooFewNodes { n: self.n, f: self.f });
        }
        if self.primary >= self.n {
            return Err(ConfigError::BadPrimary(self.primary));
        }
        Ok(())
    }

    pub fn is_replica(&self, id: NodeId) -> bool {
        (id as usize) < self.n
    }
}

/// `(prepare, commit, reply)` quorums: `(2f, 2f+1, f+1)`.
pub fn quorum_sizes(cfg: &ConsensusConfig) -> (usize, usize, usize) {
    (2 * cfg.f, 2 * cfg.f + 1, cfg.f + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgKind {
    Request,
    PrePrepare,
    Prepare,
    Commit,
    Reply,
    /// Ask for a commit certificate for `(sequence, batch_digest)`.
    Fetch,
    /// A pre-prepare plus a commit quorum, proving a batch committed.
    Certificate,
}

impl MsgKind {
    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Request => "request",
            MsgKind::PrePrepare => "preprepare",
            MsgKind::Prepare => "prepare",
            MsgKind::Commit => "commit",
            MsgKind::Reply => "reply",
            MsgKind::Fetch => "fetch",
            MsgKind::Certificate => "certificate",
        }
    }

    pub fn from_name(s: &str) -> Option<MsgKind> {
        MsgKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub const ALL: [MsgKind; 7] = [
        MsgKind::Request,
        MsgKind::PrePrepare,
        MsgKind::Prepare,
        MsgKind::Commit,
        MsgKind::Reply,
        MsgKind::Fetch,
        MsgKind::Certificate,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PbftMessage {
    pub kind: MsgKind,
    pub view: u64,
    pub sequence: u64,
    pub batch_digest: Digest32,
    pub payload: Option<Vec<u8>>,
    pub sender: NodeId,
    pub sig: Signature256,
}

impl PbftMessage {
    pub fn signed(
        key: &KeyPair,
        kind: MsgKind,
        view: u64,
        sequence: u64,
        batch_digest: Digest32,
        payload: Option<Vec<u8>>,
        sender: NodeId,
    ) -> Self {
        let mut m = PbftMessage { kind, view, sequence, batch_digest, payload, sender, sig: Signature256::ZERO };
        m.sig = sign(key, &m.preimage());
        m
    }

    /// Request and pre-prepare payloads are bound through `batch_digest`;
    /// the others are signed directly.
    pub fn preimage(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"pot/pbft");
        w.put_u8(self.kind as u8);
        w.put_u64(self.view);
        w.put_u64(self.sequence);
        w.put_digest(&self.batch_digest);
        w.put_u32(self.sender);
        if !matches!(self.kind, MsgKind::Request | MsgKind::PrePrepare) {
            match &self.payload {
                None => w.put_u8(0),
                Some(p) => {
                    w.put_u8(1);
                    w.put_digest(&hash(p));
                }
            }
        }
        w.into_bytes()
    }

    pub fn wire_size(&self) -> usize {
        1 + 8 + 8 + 32 + 1 + self.payload.as_ref().map_or(0, |p| 4 + p.len()) + 4 + 256
    }
}

impl Canonical for PbftMessage {
    fn encode(&self, w: &mut Writer) {
        w.put_u8(self.kind as u8);
        w.put_u64(self.view);
        w.put_u64(self.sequence);
        w.put_digest(&self.batch_digest);
        match &self.payload {
            None => w.put_u8(0),
            Some(p) => {
                w.put_u8(1);
                w.put_bytes32(p);
            }
        }
        w.put_u32(self.sender);
        w.put_sig(&self.sig);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let kind = *MsgKind::ALL.get(tag as usize).ok_or(CodecError::InvalidTag { what: "pbft kind", tag })?;
        let view = r.u64()?;
        let sequence = r.u64()?;
        let batch_digest = r.digest()?;
        let payload = match r.u8()? {
            0 => None,
            1 => Some(r.bytes32()?),
            tag => return Err(CodecError::InvalidTag { what: "payload", tag }),
        };
        Ok(PbftMessage { kind, view, sequence, batch_digest, payload, sender: r.u32()?, sig: r.sig()? })
    }
}

/// Public keys by node id: replicas first, then clients and other nodes.
#[derive(Clone, Debug, Default)]
pub struct Directory {
    pub keys: Vec<PublicKey>,
}

impl Directory {
    pub fn key(&self, id: NodeId) -> Option<&PublicKey> {
        self.keys.get(id as usize)
    }
}

/// Memo of signature checks shared by co-located replicas. Verification is
/// a pure function of its inputs, so caching cannot change outcomes.
#[derive(Debug, Default)]
pub struct SigCache {
    memo: Mutex<HashMap<Digest32, bool>>,
}

impl SigCache {
    pub fn verify(&self, pk: &PublicKey, sig: &Signature256, preimage: &[u8]) -> bool {
        let key = hash_parts(&[pk.as_bytes(), sig.as_bytes(), preimage]);
        if let Some(v) = self.memo.lock().expect("cache lock").get(&key) {
            return *v;
        }
        let ok = verify_sig(pk, sig, preimage);
        self.memo.lock().expect("cache lock").insert(key, ok);
        ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    /// Every replica, the sender included.
    All,
    To(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub dest: Dest,
    pub msg: PbftMessage,
}

#[derive(Clone, Debug, Default)]
pub struct StepOutput {
    pub out: Vec<Outbound>,
    /// `(sequence, digest)` pairs executed during this step, in order.
    pub committed: Vec<(u64, Digest32)>,
}

#[derive(Clone, Debug, Default)]
struct Slot {
    pre_prepare: Option<PbftMessage>,
    batch: Option<Batch>,
    prepares: BTreeMap<NodeId, Digest32>,
    commits: BTreeMap<NodeId, PbftMessage>,
    sent_commit: bool,
    committed: Option<Digest32>,
    fetched: BTreeSet<(Digest32, NodeId)>,
    waiting_fetch: BTreeSet<NodeId>,
}

impl Slot {
    fn digest(&self) -> Option<Digest32> {
        self.pre_prepare.as_ref().map(|m| m.batch_digest)
    }

    fn prepare_count(&self, d: &Digest32) -> usize {
        self.prepares.values().filter(|x| *x == d).count()
    }

    fn commit_count(&self, d: &Digest32) -> usize {
        self.commits.values().filter(|m| &m.batch_digest == d).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropStats {
    pub bad_signature: u64,
    pub malformed: u64,
    pub conflicting: u64,
    pub duplicate: u64,
}

pub struct Replica {
    pub id: NodeId,
    pub cfg: ConsensusConfig,
    key: KeyPair,
    dir: Arc<Directory>,
    cache: Arc<SigCache>,
    view: u64,
    next_seq: u64,
    log: BTreeMap<u64, Slot>,
    proposed: BTreeSet<Digest32>,
    last_executed: u64,
    pub committed: Vec<Digest32>,
    pub ledger: GlobalLedger,
    pub reports: Vec<BatchReport>,
    pub drops: DropStats,
}

impl Replica {
    pub fn new(id: NodeId, cfg: ConsensusConfig, key: KeyPair, dir: Arc<Directory>, cache: Arc<SigCache>, ledger: GlobalLedger) -> Self {
        Replica {
            id,
            cfg,
            key,
            dir,
            cache,
            view: 0,
            next_seq: 1,
            log: BTreeMap::new(),
            proposed: BTreeSet::new(),
            last_executed: 0,
            committed: Vec::new(),
            ledger,
            reports: Vec::new(),
            drops: DropStats::default(),
        }
    }

    pub fn is_primary(&self) -> bool {
        self.id as usize == self.cfg.primary
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn last_executed(&self) -> u64 {
        self.last_executed
    }

    fn msg(&self, kind: MsgKind, seq: u64, d: Digest32, payload: Option<Vec<u8>>) -> PbftMessage {
        PbftMessage::signed(&self.key, kind, self.view, seq, d, payload, self.id)
    }

    fn authentic(&self, m: &PbftMessage) -> bool {
        match self.dir.key(m.sender) {
            Some(pk) => self.cache.verify(pk, &m.sig, &m.preimage()),
            None => false,
        }
    }

    /// Primary entry point for a locally formed batch.
    pub fn propose(&mut self, batch: &Batch) -> StepOutput {
        let payload = batch.to_bytes();
        let d = hash(&payload);
        let mut out = StepOutput::default();
        if !self.is_primary() || !self.proposed.insert(d) {
            return out;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let pp = self.msg(MsgKind::PrePrepare, seq, d, Some(payload));
        out.out.push(Outbound { dest: Dest::All, msg: pp });
        out
    }

    pub fn step(&mut self, m: &PbftMessage) -> StepOutput {
        let mut out = StepOutput::default();
        if m.view != self.view && m.kind != MsgKind::Request {
            self.drops.malformed += 1;
            return out;
        }
        if !self.authentic(m) {
            self.drops.bad_signature += 1;
            return out;
        }
        match m.kind {
            MsgKind::Request => self.on_request(m, &mut out),
            MsgKind::PrePrepare => self.on_pre_prepare(m, &mut out),
            MsgKind::Prepare => self.on_prepare(m, &mut out),
            MsgKind::Commit => self.on_commit(m, &mut out),
            MsgKind::Fetch => self.on_fetch(m, &mut out),
            MsgKind::Certificate => self.on_certificate(m, &mut out),
            MsgKind::Reply => self.drops.malformed += 1,
        }
        out
    }

    fn on_request(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        let Some(payload) = &m.payload else {
            self.drops.malformed += 1;
            return;
        };
        if hash(payload) != m.batch_digest {
            self.drops.malformed += 1;
            return;
        }
        if !self.is_primary() {
            out.out.push(Outbound { dest: Dest::To(self.cfg.primary as NodeId), msg: m.clone() });
            return;
        }
        match Batch::from_bytes(payload) {
            Ok(b) => {
                let s = self.propose(&b);
                if s.out.is_empty() {
                    self.drops.duplicate += 1;
                }
                out.out.extend(s.out);
            }
            Err(_) => self.drops.malformed += 1,
        }
    }

    fn check_pre_prepare(&self, m: &PbftMessage) -> Option<Batch> {
        if m.sender as usize != self.cfg.primary || m.kind != MsgKind::PrePrepare {
            return None;
        }
        if m.sequence <= self.last_executed || m.sequence > self.last_executed + WATERMARK {
            return None;
        }
        let payload = m.payload.as_ref()?;
        if hash(payload) != m.batch_digest {
            return None;
        }
        Batch::from_bytes(payload).ok()
    }

    fn on_pre_prepare(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        let Some(batch) = self.check_pre_prepare(m) else {
            self.drops.malformed += 1;
            return;
        };
        let slot = self.log.entry(m.sequence).or_default();
        match slot.digest() {
            Some(d) if d == m.batch_digest => {
                self.drops.duplicate += 1;
                return;
            }
            Some(_) => {
                self.drops.conflicting += 1;
                return;
            }
            None => {}
        }
        slot.pre_prepare = Some(m.clone());
        slot.batch = Some(batch);
        let prep = self.msg(MsgKind::Prepare, m.sequence, m.batch_digest, None);
        out.out.push(Outbound { dest: Dest::All, msg: prep });
        self.advance(m.sequence, out);
    }

    fn on_prepare(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        if !self.cfg.is_replica(m.sender) || m.sequence <= self.last_executed {
            self.drops.malformed += 1;
            return;
        }
        let slot = self.log.entry(m.sequence).or_default();
        if slot.prepares.contains_key(&m.sender) {
            self.drops.duplicate += 1;
            return;
        }
        slot.prepares.insert(m.sender, m.batch_digest);
        self.advance(m.sequence, out);
    }

    fn on_commit(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        if !self.cfg.is_replica(m.sender) {
            self.drops.malformed += 1;
            return;
        }
        let slot = self.log.entry(m.sequence).or_default();
        if slot.commits.contains_key(&m.sender) {
            self.drops.duplicate += 1;
            return;
        }
        slot.commits.insert(m.sender, m.clone());
        self.advance(m.sequence, out);
    }

    /// Sends a commit once prepared, marks the slot committed once a commit
    /// quorum agrees, then executes whatever is ready.
    fn advance(&mut self, seq: u64, out: &mut StepOutput) {
        let (pq, cq, _) = quorum_sizes(&self.cfg);
        let Some(slot) = self.log.get_mut(&seq) else { return };
        if let Some(d) = slot.digest() {
            if !slot.sent_commit && slot.prepare_count(&d) >= pq {
                slot.sent_commit = true;
                let c = PbftMessage::signed(&self.key, MsgKind::Commit, self.view, seq, d, None, self.id);
                out.out.push(Outbound { dest: Dest::All, msg: c });
            }
            if slot.committed.is_none() && slot.sent_commit && slot.commit_count(&d) >= cq {
                slot.committed = Some(d);
            }
        }
        self.execute_ready(out);
    }

    fn execute_ready(&mut self, out: &mut StepOutput) {
        loop {
            let seq = self.last_executed + 1;
            let Some(slot) = self.log.get_mut(&seq) else { return };
            let (Some(d), Some(batch)) = (slot.committed, slot.batch.as_ref()) else { return };
            let batch = batch.clone();
            let waiting: Vec<NodeId> = std::mem::take(&mut slot.waiting_fetch).into_iter().collect();
            let report = self.ledger.apply_batch(&batch);
            self.reports.push(report);
            self.committed.push(d);
            self.last_executed = seq;
            out.committed.push((seq, d));
            if let Some(origin) = batch.origin {
                let root = self.ledger.state_root();
                let reply = self.msg(MsgKind::Reply, seq, d, Some(root.0.to_vec()));
                out.out.push(Outbound { dest: Dest::To(origin), msg: reply });
            }
            for w in waiting {
                if let Some(c) = self.certificate(seq) {
                    out.out.push(Outbound { dest: Dest::To(w), msg: c });
                }
            }
        }
    }

    fn certificate(&self, seq: u64) -> Option<PbftMessage> {
        let slot = self.log.get(&seq)?;
        let d = slot.committed?;
        let pp = slot.pre_prepare.as_ref().filter(|p| p.batch_digest == d)?;
        let commits: Vec<PbftMessage> = slot.commits.values().filter(|c| c.batch_digest == d).cloned().collect();
        let mut w = Writer::new();
        pp.encode(&mut w);
        encode_seq(&mut w, &commits);
        Some(self.msg(MsgKind::Certificate, seq, d, Some(w.into_bytes())))
    }

    fn on_fetch(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        if !self.cfg.is_replica(m.sender) {
            self.drops.malformed += 1;
            return;
        }
        let seq = m.sequence;
        let committed = self.log.get(&seq).and_then(|s| s.committed);
        match committed {
            Some(d) if d == m.batch_digest && seq <= self.last_executed => {
                if let Some(c) = self.certificate(seq) {
                    out.out.push(Outbound { dest: Dest::To(m.sender), msg: c });
                }
            }
            _ => {
                self.log.entry(seq).or_default().waiting_fetch.insert(m.sender);
            }
        }
    }

    fn on_certificate(&mut self, m: &PbftMessage, out: &mut StepOutput) {
        let seq = m.sequence;
        if seq <= self.last_executed || self.log.get(&seq).is_some_and(|s| s.committed.is_some()) {
            self.drops.duplicate += 1;
            return;
        }
        let Some((pp, batch)) = self.verify_certificate(m) else {
            self.drops.malformed += 1;
            return;
        };
        let slot = self.log.entry(seq).or_default();
        slot.pre_prepare = Some(pp);
        slot.batch = Some(batch);
        slot.committed = Some(m.batch_digest);
        slot.sent_commit = true;
        self.execute_ready(out);
    }

    fn verify_certificate(&self, m: &PbftMessage) -> Option<(PbftMessage, Batch)> {
        let (_, cq, _) = quorum_sizes(&self.cfg);
        let payload = m.payload.as_ref()?;
        let mut r = Reader::new(payload);
        let pp = PbftMessage::decode(&mut r).ok()?;
        let commits: Vec<PbftMessage> = decode_seq(&mut r).ok()?;
        r.finish().ok()?;
        if pp.sequence != m.sequence || pp.batch_digest != m.batch_digest || pp.view != self.view || !self.authentic(&pp) {
            return None;
        }
        let batch = self.check_pre_prepare(&pp)?;
        let mut signers = BTreeSet::new();
        for c in &commits {
            if c.kind == MsgKind::Commit
                && c.view == self.view
                && c.sequence == m.sequence
                && c.batch_digest == m.batch_digest
                && self.cfg.is_replica(c.sender)
                && self.authentic(c)
            {
                signers.insert(c.sender);
            }
        }
        (signers.len() >= cq).then_some((pp, batch))
    }

    /// Called when no messages are in flight. For every stalled sequence
    /// with at least f+1 commits for some digest, asks each committer not
    /// yet asked for a certificate.
    pub fn on_idle(&mut self) -> Vec<Outbound> {
        let (_, _, fq) = quorum_sizes(&self.cfg);
        let mut out = Vec::new();
        let view = self.view;
        let id = self.id;
        let key = self.key.clone();
        for (seq, slot) in self.log.range_mut(self.last_executed + 1..) {
            if slot.committed.is_some() && slot.batch.is_some() {
                continue;
            }
            let mut by_digest: BTreeMap<Digest32, Vec<NodeId>> = BTreeMap::new();
            for (s, c) in &slot.commits {
                by_digest.entry(c.batch_digest).or_default().push(*s);
            }
            for (d, senders) in by_digest {
                if senders.len() < fq {
                    continue;
                }
                let fresh: Vec<NodeId> = senders.into_iter().filter(|s| *s != id && slot.fetched.insert((d, *s))).collect();
                if fresh.is_empty() {
                    continue;
                }
                let req = PbftMessage::signed(&key, MsgKind::Fetch, view, *seq, d, None, id);
                for s in fresh {
                    out.push(Outbound { dest: Dest::To(s), msg: req.clone() });
                }
            }
        }
        out
    }
}

/// Client-side reply tally: a result is accepted after f+1 matching replies
/// from distinct replicas.
#[derive(Debug)]
pub struct ReplyCollector {
    cfg: ConsensusConfig,
    dir: Arc<Directory>,
    cache: Arc<SigCache>,
    tally: BTreeMap<(u64, Digest32, Vec<u8>), BTreeSet<NodeId>>,
    pub accepted: BTreeMap<Digest32, (u64, Vec<u8>)>,
}

impl ReplyCollector {
    pub fn new(cfg: ConsensusConfig, dir: Arc<Directory>, cache: Arc<SigCache>) -> Self {
        ReplyCollector { cfg, dir, cache, tally: BTreeMap::new(), accepted: BTreeMap::new() }
    }

    /// Returns the accepted batch digest when this reply completes a quorum.
    pub fn on_reply(&mut self, m: &PbftMessage) -> Option<Digest32> {
        if m.kind != MsgKind::Reply || !self.cfg.is_replica(m.sender) {
            return None;
        }
        let pk = self.dir.key(m.sender)?;
        if !self.cache.verify(pk, &m.sig, &m.preimage()) {
            return None;
        }
        if self.accepted.contains_key(&m.batch_digest) {
            return None;
        }
        let result = m.payload.clone().unwrap_or_default();
        let voters = self.tally.entry((m.sequence, m.batch_digest, result.clone())).or_default();
        voters.insert(m.sender);
        let (_, _, rq) = quorum_sizes(&self.cfg);
        if voters.len() >= rq {
            self.accepted.insert(m.batch_digest, (m.sequence, result));
            return Some(m.batch_digest);
        }
        None
    }
}

// ---------------------------------------------------------------- byzantine behaviour

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fault {
    /// Sends conflicting messages to different replicas.
    Equivocate,
    /// Sends nothing.
    Silent,
    /// Corrupts every signature.
    BadSignature,
    /// Sends everything twice and replays earlier traffic.
    Replay,
}

impl Fault {
    pub const ALL: [Fault; 4] = [Fault::Equivocate, Fault::Silent, Fault::BadSignature, Fault::Replay];

    pub fn name(self) -> &'static str {
        match self {
            Fault::Equivocate => "equivocate",
            Fault::Silent => "silent",
            Fault::BadSignature => "bad-sig",
            Fault::Replay => "replay",
        }
    }
}

/// Rewrites a faulty replica's outgoing traffic.
pub struct FaultFilter {
    pub fault: Fault,
    key: KeyPair,
    n: usize,
    history: Vec<Outbound>,
}

impl FaultFilter {
    pub fn new(fault: Fault, key: KeyPair, n: usize) -> Self {
        FaultFilter { fault, key, n, history: Vec::new() }
    }

    fn resign(&self, mut m: PbftMessage) -> PbftMessage {
        m.sig = sign(&self.key, &m.preimage());
        m
    }

    /// A conflicting version of `m` with a different digest.
    fn twin(&self, m: &PbftMessage) -> PbftMessage {
        let mut t = m.clone();
        match (&m.kind, &m.payload) {
            (MsgKind::PrePrepare, Some(p)) => {
                if let Ok(mut b) = Batch::from_bytes(p) {
                    b.timestamp = b.timestamp.wrapping_add(1);
                    let raw = b.to_bytes();
                    t.batch_digest = hash(&raw);
                    t.payload = Some(raw);
                }
            }
            _ => t.batch_digest = hash(m.batch_digest.as_bytes()),
        }
        self.resign(t)
    }

    pub fn apply(&mut self, out: Vec<Outbound>) -> Vec<Outbound> {
        match self.fault {
            Fault::Silent => Vec::new(),
            Fault::BadSignature => out
                .into_iter()
                .map(|mut o| {
                    o.msg.sig.0[0] ^= 0xff;
                    o
                })
                .collect(),
            Fault::Replay if out.is_empty() => out,
            Fault::Replay => {
                let mut res = Vec::with_capacity(out.len() * 2 + self.history.len());
                res.extend(self.history.iter().cloned());
                for o in &out {
                    res.push(o.clone());
                    res.push(o.clone());
                }
                self.history.extend(out);
                if self.history.len() > 32 {
                    let cut = self.history.len() - 32;
                    self.history.drain(..cut);
                }
                res
            }
            Fault::Equivocate => {
                let mut res = Vec::new();
                for o in out {
                    match o.dest {
                        Dest::All if matches!(o.msg.kind, MsgKind::PrePrepare | MsgKind::Prepare | MsgKind::Commit) => {
                            let twin = self.twin(&o.msg);
                            for to in 0..self.n as NodeId {
                                let msg = if to % 2 == 0 { o.msg.clone() } else { twin.clone() };
                                res.push(Outbound { dest: Dest::To(to), msg });
                            }
                        }
                        _ => {
                            let twin = self.twin(&o.msg);
                            res.push(Outbound { dest: o.dest, msg: twin });
                        }
                    }
                }
                res
            }
        }
    }
}
