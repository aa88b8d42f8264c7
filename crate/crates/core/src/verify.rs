//! Re-checks a fault-free message trace: delivery order, node ids and
//! per-round quorum counts.

use std::collections::{BTreeMap, BTreeSet};

use crate::netsim::Trace;
use crate::pbft::{quorum_sizes, ConsensusConfig, MsgKind, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceSummary {
    pub rounds: usize,
    pub replicas: usize,
    pub messages: usize,
}

pub fn verify_trace(t: &Trace) -> Result<TraceSummary, String> {
    if t.rows.is_empty() {
        return Err("empty trace".into());
    }
    for (i, w) in t.rows.windows(2).enumerate() {
        if w[1].time_ns < w[0].time_ns {
            return Err(format!("row {}: time goes backwards", i + 2));
        }
    }
    let replicas: BTreeSet<NodeId> = t.rows.iter().filter(|r| r.kind == MsgKind::PrePrepare).map(|r| r.to).collect();
    let n = replicas.len();
    if n == 0 {
        return Err("no pre-prepare delivered".into());
    }
    if replicas.iter().copied().ne(0..n as NodeId) {
        return Err("replica ids are not 0..n".into());
    }
    let client = n as NodeId;
    for (i, r) in t.rows.iter().enumerate() {
        if r.from > client || r.to > client {
            return Err(format!("row {}: unknown node", i + 2));
        }
        if (r.kind == MsgKind::Reply) != (r.to == client) {
            return Err(format!("row {}: {} sent to node {}", i + 2, r.kind.name(), r.to));
        }
        if matches!(r.kind, MsgKind::Fetch | MsgKind::Certificate) {
            return Err(format!("row {}: recovery traffic in a fault-free trace", i + 2));
        }
    }

    let mut per: BTreeMap<(NodeId, MsgKind), usize> = BTreeMap::new();
    for r in &t.rows {
        *per.entry((r.to, r.kind)).or_default() += 1;
    }
    let count = |to: NodeId, k: MsgKind| per.get(&(to, k)).copied().unwrap_or(0);
    let rounds = count(0, MsgKind::PrePrepare);
    let cfg = ConsensusConfig::new(n);
    let (prepare_q, commit_q, reply_q) = quorum_sizes(&cfg);
    for id in 0..n as NodeId {
        if count(id, MsgKind::PrePrepare) != rounds {
            return Err(format!("replica {id}: {} pre-prepares, expected {rounds}", count(id, MsgKind::PrePrepare)));
        }
        for (k, q) in [(MsgKind::Prepare, prepare_q), (MsgKind::Commit, commit_q)] {
            let c = count(id, k);
            if c < rounds * q || c > rounds * n {
                return Err(format!("replica {id}: {c} {} messages for {rounds} rounds of {n}", k.name()));
            }
        }
    }
    let replies = count(client, MsgKind::Reply);
    if replies < rounds * reply_q || replies > rounds * n {
        return Err(format!("client: {replies} replies for {rounds} rounds"));
    }
    Ok(TraceSummary { rounds, replicas: n, messages: t.rows.len() })
}
