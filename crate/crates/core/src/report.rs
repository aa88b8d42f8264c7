//! CSV reports: experiment grids and the sync-time, settlement-cost and
//! staking tables.

use std::fmt::Write as _;
use std::thread;

use crate::config::GridSpec;
use crate::economics::{attack_budget, attack_supply_fraction, settlement_cost, GasModel, MinStakes};
use crate::netsim::{Bandwidth, NetConfig};
use crate::records::{Batch, OrderTemplate, Tokens, Tx};
use crate::scenario::{Mode, Scenario, ScenarioResult};
use crate::sync::{measure_sync, synthetic_batch, SyncReport, SyncSpec, SyncStatus};
use crate::crypto::KeyPair;
use crate::tcp::measure_sync_tcp;

pub const GRID_HEADER: &str = "scenario,nodes,bandwidth_mbps,batch_tx,sync_seconds,protocol_ms,winner,payout_total,status";

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub scenario: String,
    pub nodes: usize,
    pub bandwidth: Bandwidth,
    pub batch_tx: usize,
    /// `None` when the run halted.
    pub sync_seconds: Option<f64>,
    pub protocol_ms: f64,
    pub winner: String,
    pub payout_total: Tokens,
    pub status: String,
}

fn mbps(b: Bandwidth) -> String {
    b.mbps().map_or_else(|| "unlimited".to_string(), |m| format!("{m}"))
}

impl GridRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{},{:.6},{}",
            self.scenario,
            self.nodes,
            mbps(self.bandwidth),
            self.batch_tx,
            self.sync_seconds.map_or_else(|| "-".to_string(), |s| format!("{s:.6}")),
            self.protocol_ms,
            self.winner,
            self.payout_total.as_f64(),
            self.status
        )
    }
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut out = String::from(GRID_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// The report row of a full scenario run. Sync time is the mean over
/// batches and `batch_tx` the number of transactions ordered.
pub fn scenario_row(s: &Scenario, r: &ScenarioResult) -> GridRow {
    GridRow {
        scenario: s.name.clone(),
        nodes: s.consensus.n,
        bandwidth: s.bandwidth,
        batch_tx: r.committed_txs(),
        sync_seconds: Some(r.mean_sync()),
        protocol_ms: r.protocol_ms,
        winner: r.winners(),
        payout_total: r.payout_total,
        status: "ok".into(),
    }
}

fn sync_row(name: &str, nodes: usize, bw: Bandwidth, batch_tx: usize, rep: &SyncReport) -> GridRow {
    GridRow {
        scenario: name.to_string(),
        nodes,
        bandwidth: bw,
        batch_tx,
        sync_seconds: (rep.status == SyncStatus::Completed).then_some(rep.sync_seconds),
        protocol_ms: rep.protocol_ms,
        winner: "-".into(),
        payout_total: Tokens::ZERO,
        status: rep.status.label().into(),
    }
}

pub fn sim_net(base: &NetConfig, bw: Bandwidth, seed: u64) -> NetConfig {
    NetConfig { bandwidth_bps: bw.bps(), seed, ..base.clone() }
}

fn grid_cell(g: &GridSpec, mode: Mode, port_base: u16, idx: usize, (nodes, bw, tx): (usize, Bandwidth, usize)) -> GridRow {
    let name = format!("{}-{idx}", g.base.name);
    match mode {
        Mode::SimulatedNetwork => {
            let rep = measure_sync(&SyncSpec { nodes, batch_tx: tx, net: sim_net(&g.base.net, bw, g.base.seed), record_trace: false });
            sync_row(&name, nodes, bw, tx, &rep)
        }
        Mode::LocalhostTcp => {
            let (secs, status) = match measure_sync_tcp(nodes, tx, g.base.seed, port_base) {
                Ok(s) => (Some(s), "ok".to_string()),
                Err(e) => (None, format!("error: {e}").replace(',', ";")),
            };
            GridRow {
                scenario: name,
                nodes,
                bandwidth: Bandwidth::Unlimited,
                batch_tx: tx,
                sync_seconds: secs,
                protocol_ms: 0.0,
                winner: "-".into(),
                payout_total: Tokens::ZERO,
                status,
            }
        }
    }
}

/// Runs every cell. Simulated cells run on worker threads; rows keep cell
/// order. Localhost cells run one at a time since they share ports.
pub fn run_grid(g: &GridSpec, mode: Mode, port_base: u16) -> Vec<GridRow> {
    let cells = g.cells();
    if mode == Mode::LocalhostTcp {
        return cells.into_iter().enumerate().map(|(i, c)| grid_cell(g, mode, port_base, i, c)).collect();
    }
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len().max(1));
    let mut rows: Vec<Option<GridRow>> = vec![None; cells.len()];
    thread::scope(|sc| {
        let chunks: Vec<Vec<_>> = (0..workers).map(|w| cells.iter().copied().enumerate().filter(|(i, _)| i % workers == w).collect()).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| sc.spawn(move || chunk.into_iter().map(|(i, c)| (i, grid_cell(g, mode, port_base, i, c))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("grid worker") {
                rows[i] = Some(r);
            }
        }
    });
    rows.into_iter().map(|r| r.expect("every cell ran")).collect()
}

// ---------------------------------------------------------------- sync tables

/// `(orders, validations, published bytes, published seconds at 10/30/100 nodes)`.
pub const TABLE3_ROWS: [(usize, usize, usize, [f64; 3]); 5] = [
    (1, 10, 3432, [0.0387, 0.132, 0.463]),
    (1, 50, 15412, [0.0374, 0.106, 0.418]),
    (1, 100, 30512, [0.0466, 0.149, 0.373]),
    (10, 50, 15640, [0.0452, 0.113, 0.407]),
    (10, 100, 30740, [0.0338, 0.125, 0.392]),
];
pub const TABLE3_NODES: [usize; 3] = [10, 30, 100];

/// `(transactions, nodes, published seconds slow/medium/fast)`; `None` is the
/// missing published cell.
pub const TABLE4_ROWS: [(usize, usize, [Option<f64>; 3]); 7] = [
    (100, 10, [Some(8.609), Some(1.494), Some(1.497)]),
    (100, 30, [Some(8.707), Some(1.685), Some(1.755)]),
    (1000, 30, [Some(73.536), Some(1.682), Some(1.833)]),
    (100, 50, [Some(8.697), Some(1.842), Some(1.752)]),
    (200, 50, [Some(15.984), Some(1.908), Some(1.893)]),
    (5000, 50, [Some(37.532), Some(1.767), Some(1.678)]),
    (10000, 50, [None, Some(7.215), Some(2.074)]),
];

/// Orders and validations from unregistered signers, so every replica
/// rejects them the same way and the batch costs only transport.
pub fn table3_batch(orders: usize, validations: usize, seed: u64, origin: u32) -> Batch {
    let mut b = synthetic_batch(validations, seed, 1, Some(origin));
    let client = KeyPair::from_seed(seed ^ 0x0de5);
    for i in 0..orders {
        let t = OrderTemplate {
            reward: Tokens::whole(1 + i as u64),
            workload_type: "toy-regression".into(),
            t0: 1,
            dt_train: 10,
            dt_validate: 5,
            dt_challenge: 5,
            link: format!("toy:dim=32;train={i};test={i}"),
        };
        if let Ok(o) = t.sign(&client) {
            b.txs.insert(0, Tx::Order(o));
        }
    }
    b
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table3Row {
    pub orders: usize,
    pub validations: usize,
    pub bytes: usize,
    pub published_bytes: usize,
    pub seconds: Vec<Option<f64>>,
    pub published: [f64; 3],
}

/// Localhost sync times: simulated with no bandwidth limit, or real TCP.
pub fn table3(seed: u64, mode: Mode, port_base: u16) -> Vec<Table3Row> {
    TABLE3_ROWS
        .iter()
        .map(|&(orders, validations, published_bytes, published)| {
            let mut bytes = 0;
            let seconds = TABLE3_NODES
                .iter()
                .map(|&n| {
                    let batch = table3_batch(orders, validations, seed, n as u32);
                    bytes = crate::codec::Canonical::to_bytes(&batch).len();
                    match mode {
                        Mode::SimulatedNetwork => {
                            let rep = crate::sync::measure_batch(n, &batch, NetConfig::localhost(seed));
                            (rep.status == SyncStatus::Completed).then_some(rep.sync_seconds)
                        }
                        Mode::LocalhostTcp => crate::tcp::measure_batch_tcp(n, &batch, port_base).ok(),
                    }
                })
                .collect();
            Table3Row { orders, validations, bytes, published_bytes, seconds, published }
        })
        .collect()
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn table3_csv(rows: &[Table3Row]) -> String {
    let mut out = String::from("orders,validations,bytes,published_bytes");
    for n in TABLE3_NODES {
        let _ = write!(out, ",sync_{n}_nodes,published_{n}_nodes");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.orders, r.validations, r.bytes, r.published_bytes);
        for (s, p) in r.seconds.iter().zip(r.published) {
            let _ = write!(out, ",{},{p}", opt(*s, 4));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table4Cell {
    pub bandwidth: Bandwidth,
    pub seconds: Option<f64>,
    pub status: String,
    pub published: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table4Row {
    pub batch_tx: usize,
    pub nodes: usize,
    pub cells: Vec<Table4Cell>,
}

impl Table4Row {
    pub fn seconds(&self, bw: Bandwidth) -> Option<f64> {
        self.cells.iter().find(|c| c.bandwidth == bw).and_then(|c| c.seconds)
    }

    pub fn status(&self, bw: Bandwidth) -> &str {
        self.cells.iter().find(|c| c.bandwidth == bw).map_or("", |c| c.status.as_str())
    }
}

pub fn table4_cell(batch_tx: usize, nodes: usize, bw: Bandwidth, seed: u64) -> SyncReport {
    measure_sync(&SyncSpec { nodes, batch_tx, net: NetConfig::wan(bw, seed), record_trace: false })
}

pub fn table4(seed: u64) -> Vec<Table4Row> {
    TABLE4_ROWS
        .iter()
        .map(|&(batch_tx, nodes, published)| Table4Row {
            batch_tx,
            nodes,
            cells: Bandwidth::TABLE
                .iter()
                .zip(published)
                .map(|(&bw, p)| {
                    let rep = table4_cell(batch_tx, nodes, bw, seed);
                    Table4Cell {
                        bandwidth: bw,
                        seconds: (rep.status == SyncStatus::Completed).then_some(rep.sync_seconds),
                        status: rep.status.label().into(),
                        published: p,
                    }
                })
                .collect(),
        })
        .collect()
}

pub fn table4_csv(rows: &[Table4Row]) -> String {
    let mut out = String::from("batch_tx,nodes");
    for bw in Bandwidth::TABLE {
        let _ = write!(out, ",{0}_seconds,{0}_status,{0}_published", bw.name());
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", r.batch_tx, r.nodes);
        for c in &r.cells {
            let _ = write!(out, ",{},{},{}", opt(c.seconds, 3), c.status, opt(c.published, 3));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- cost tables

pub const PUBLISHED_TOTAL_TOKENS: f64 = 0.007582;
pub const PUBLISHED_TOTAL_USD: f64 = 1.87;

/// Settlement cost per function and the total for `k` confirmations.
pub fn table5_csv(gas: &GasModel, k: u64) -> String {
    let mut out = String::from("function,gas,tokens,usd\n");
    for (name, g) in [("propose", gas.propose_gas), ("confirm", gas.confirm_gas), ("execute", gas.execute_gas)] {
        let c = gas.cost_of(g);
        let _ = writeln!(out, "{name},{},{:.6},{:.4}", c.gas, c.tokens, c.usd);
    }
    let total = settlement_cost(gas, k);
    let _ = writeln!(out, "total_k{k},{},{:.6},{:.2}", total.gas, total.tokens, total.usd);
    let _ = writeln!(
        out,
        "# published total {PUBLISHED_TOTAL_TOKENS} tokens / ${PUBLISHED_TOTAL_USD}; the row sum above is {} gas = {:.6} tokens = ${:.2}",
        total.gas, total.tokens, total.usd
    );
    out
}

/// Attack budget and supply share for corrupting `k` of `n` aggregators.
pub fn staking_csv(mins: &MinStakes, n: u64, staked_fraction: f64) -> String {
    let mut out = String::from("k,n,stake_each,attack_budget,supply_fraction\n");
    for k in [n / 3 + 1, (2 * n) / 3 + 1, n] {
        let b = attack_budget(mins.aggregator, k);
        let _ = writeln!(out, "{k},{n},{:.0},{:.0},{:.4}", mins.aggregator.as_f64(), b.as_f64(), attack_supply_fraction(staked_fraction, k, n));
    }
    out
}
