//! Scenario files: one `key = value` per line, dotted keys, `#` comments.
//! The grammar and every key are listed in the README.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::agents::{AgentPolicy, Honesty};
use crate::netsim::{Bandwidth, NetConfig};
use crate::pbft::ConsensusConfig;
use crate::records::{Role, Tokens};
use crate::scenario::{AgentSpec, Mode, OrderSpec, Scenario};
use crate::workload::{TaskSpec, MAX_DIMENSION};
use crate::economics::EconomicsParams;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), msg: msg.into() }
}

/// Raw `key -> (line, value)` pairs.
#[derive(Clone, Debug, Default)]
struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn parse(text: &str) -> Result<Entries, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split_once('#').map_or(raw, |(b, _)| b).trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Parse { line, msg: "expected key = value".into() })?;
            let (k, v) = (k.trim(), v.trim());
            let key_ok = !k.is_empty() && k.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'));
            if !key_ok {
                return Err(ConfigError::Parse { line, msg: format!("bad key {k:?}") });
            }
            if v.is_empty() {
                return Err(ConfigError::Parse { line, msg: format!("empty value for {k}") });
            }
            if map.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(ConfigError::Parse { line, msg: format!("duplicate key {k}") });
            }
        }
        Ok(Entries(map))
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.remove(key)
    }

    fn str(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|(_, v)| v)
    }

    fn int(&mut self, key: &str) -> Result<Option<i128>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .replace('_', "")
                .parse::<i128>()
                .map(Some)
                .map_err(|_| ConfigError::Parse { line, msg: format!("{key}: expected an integer, got {v:?}") }),
        }
    }

    fn uint(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.int(key)? {
            None => Ok(None),
            Some(v) if v < 0 => Err(invalid(key, "must not be negative")),
            Some(v) => u64::try_from(v).map(Some).map_err(|_| invalid(key, "too large")),
        }
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(ConfigError::Parse { line, msg: format!("{key}: expected a number, got {v:?}") }),
            },
        }
    }

    fn tokens(&mut self, key: &str) -> Result<Option<Tokens>, ConfigError> {
        match self.float(key)? {
            None => Ok(None),
            Some(x) if x < 0.0 => Err(invalid(key, "must not be negative")),
            Some(x) => Tokens::from_f64(x).map(Some).ok_or_else(|| invalid(key, "out of range")),
        }
    }

    fn list(&mut self, key: &str) -> Option<(usize, Vec<String>)> {
        self.take(key).map(|(l, v)| (l, v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()))
    }

    /// Distinct `<prefix>.<name>.` names, in key order.
    fn names(&self, prefix: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in self.0.keys() {
            if let Some(rest) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                if let Some((name, _)) = rest.split_once('.') {
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                }
            }
        }
        out
    }

    fn reject_rest(&self) -> Result<(), ConfigError> {
        match self.0.iter().min_by_key(|(_, (l, _))| *l) {
            Some((k, (line, _))) => Err(ConfigError::Parse { line: *line, msg: format!("unknown key {k}") }),
            None => Ok(()),
        }
    }
}

fn role_from_name(s: &str) -> Option<Role> {
    Role::ALL.into_iter().find(|r| r.name() == s)
}

fn bandwidth(key: &str, v: &str) -> Result<Bandwidth, ConfigError> {
    Bandwidth::from_name(v).ok_or_else(|| invalid(key, format!("unknown bandwidth class {v:?}")))
}

fn build(e: &mut Entries) -> Result<Scenario, ConfigError> {
    let seed = e.uint("seed")?.ok_or_else(|| invalid("seed", "required"))?;
    let name = e.str("name").unwrap_or_else(|| "scenario".into());
    let mode = match e.str("mode") {
        None => Mode::SimulatedNetwork,
        Some(v) => Mode::from_name(&v).ok_or_else(|| invalid("mode", format!("unknown mode {v:?}")))?,
    };

    let n = e.uint("consensus.n")?.unwrap_or(4) as usize;
    let consensus = ConsensusConfig::new(n);
    consensus.validate().map_err(|err| invalid("consensus.n", err.to_string()))?;

    let bw = match e.str("links.bandwidth") {
        None => Bandwidth::Fast,
        Some(v) => bandwidth("links.bandwidth", &v)?,
    };
    let mut net = NetConfig::wan(bw, seed);
    if let Some(x) = e.float("links.latency_min_s")? {
        net.latency_min_s = x;
    }
    if let Some(x) = e.float("links.latency_max_s")? {
        net.latency_max_s = x;
    }
    if let Some(x) = e.float("links.cpu_per_msg_s")? {
        net.cpu_per_msg_s = x;
    }
    if let Some(x) = e.float("links.cpu_per_byte_s")? {
        net.cpu_per_byte_s = x;
    }
    if let Some(x) = e.float("links.watchdog_s")? {
        net.watchdog_s = x;
    }
    net.validate().map_err(|m| invalid("links", m))?;

    let mut econ = EconomicsParams::default();
    for (key, slot) in [
        ("economics.min_stake.aggregator", &mut econ.min_stakes.aggregator),
        ("economics.min_stake.miner", &mut econ.min_stakes.miner),
        ("economics.min_stake.validator", &mut econ.min_stakes.validator),
        ("economics.min_stake.verifier", &mut econ.min_stakes.verifier),
    ] {
        if let Some(t) = e.tokens(key)? {
            *slot = t;
        }
    }
    for (key, slot) in [
        ("economics.tax_bps", &mut econ.split.tax_bps),
        ("economics.validator_share_bps", &mut econ.split.validator_share_bps),
        ("economics.vote_threshold_bps", &mut econ.vote_threshold_bps),
        ("economics.delivery_grace_s", &mut econ.delivery_grace_s),
    ] {
        if let Some(v) = e.uint(key)? {
            *slot = v;
        }
    }
    if econ.split.tax_bps + econ.split.validator_share_bps > 10_000 {
        return Err(invalid("economics.tax_bps", "tax plus validator share exceeds 10000 bps"));
    }
    if econ.vote_threshold_bps > 10_000 {
        return Err(invalid("economics.vote_threshold_bps", "exceeds 10000 bps"));
    }
    if let Some(k) = e.uint("economics.multisig_k")? {
        econ.multisig_k = k as usize;
    }
    if econ.multisig_k == 0 || econ.multisig_k > n {
        return Err(invalid("economics.multisig_k", format!("must be in 1..={n}")));
    }
    for (key, slot) in [("gas_price_gwei", &mut econ.gas.gas_price_gwei), ("token_price_usd", &mut econ.gas.token_price_usd)] {
        if let Some(x) = e.float(key)? {
            if x < 0.0 {
                return Err(invalid(key, "must not be negative"));
            }
            *slot = x;
        }
    }
    let funds = e.tokens("economics.funds")?.unwrap_or(Tokens::whole(1_000));
    let v_stake = e.tokens("economics.v_stake")?.unwrap_or(Tokens::whole(10));
    let c_stake = e.tokens("economics.c_stake")?.unwrap_or(Tokens::whole(5));
    if v_stake.is_zero() || c_stake.is_zero() {
        return Err(invalid("economics.v_stake", "stakes must be positive"));
    }

    let budget = e.uint("miner.budget")?.unwrap_or(2000);
    let max_orders = e.uint("miner.max_orders")?.unwrap_or(1) as usize;
    if max_orders == 0 {
        return Err(invalid("miner.max_orders", "must be at least 1"));
    }

    // Honest agents from per-role counts, then explicit agents.
    let explicit = e.names("agent");
    let defaults: [(&str, Role, u64); 4] =
        [("nodes.clients", Role::Client, 1), ("nodes.miners", Role::Miner, 2), ("nodes.validators", Role::Validator, 3), ("nodes.verifiers", Role::Verifier, 1)];
    let mut agents: Vec<AgentSpec> = Vec::new();
    for (key, role, default) in defaults {
        let count = e.uint(key)?.unwrap_or(if explicit.is_empty() { default } else { 0 });
        for i in 0..count {
            agents.push(AgentSpec {
                name: format!("{}{i}", role.name()),
                policy: AgentPolicy { role, honesty: Honesty::Honest, compute_budget: budget, rng_seed: seed.wrapping_add(agents.len() as u64) },
                deposit: econ.min_stakes.for_role(role),
            });
        }
    }
    for a in explicit {
        let p = |f: &str| format!("agent.{a}.{f}");
        let role_s = e.str(&p("role")).ok_or_else(|| invalid(&p("role"), "required"))?;
        let role = role_from_name(&role_s).ok_or_else(|| invalid(&p("role"), format!("unknown role {role_s:?}")))?;
        if role == Role::Aggregator {
            return Err(invalid(&p("role"), "aggregators come from consensus.n"));
        }
        let honesty = match e.str(&p("honesty")) {
            None => Honesty::Honest,
            Some(h) => Honesty::from_name(&h).ok_or_else(|| invalid(&p("honesty"), format!("unknown behaviour {h:?}")))?,
        };
        if honesty.role().is_some_and(|r| r != role) {
            return Err(invalid(&p("honesty"), format!("{} needs role {}", honesty.name(), honesty.role().map_or("", Role::name))));
        }
        if agents.iter().any(|x| x.name == a) {
            return Err(invalid(&p("role"), "duplicate agent name"));
        }
        let policy = AgentPolicy {
            role,
            honesty,
            compute_budget: e.uint(&p("budget"))?.unwrap_or(budget),
            rng_seed: e.uint(&p("seed"))?.unwrap_or(seed.wrapping_add(agents.len() as u64)),
        };
        let deposit = e.tokens(&p("deposit"))?.unwrap_or(econ.min_stakes.for_role(role));
        agents.push(AgentSpec { name: a, policy, deposit });
    }

    let mut orders = Vec::new();
    let mut order_names = e.names("order");
    if order_names.is_empty() && e.uint("orders")? != Some(0) {
        order_names.push(String::new());
    }
    for o in order_names {
        let default_name = o.is_empty();
        let p = |f: &str| format!("order.{o}.{f}");
        let name = if default_name { "order0".to_string() } else { o.clone() };
        let get_u = |e: &mut Entries, f: &str, d: u64| -> Result<u64, ConfigError> {
            if default_name {
                Ok(d)
            } else {
                Ok(e.uint(&p(f))?.unwrap_or(d))
            }
        };
        let client = if default_name { None } else { e.str(&p("client")) };
        let client = client.unwrap_or_else(|| "client0".into());
        let reward = if default_name { None } else { e.tokens(&p("reward"))? };
        let dim = get_u(e, "dim", 32)?;
        if dim == 0 || dim > MAX_DIMENSION as u64 {
            return Err(invalid(&p("dim"), format!("must be in 1..={MAX_DIMENSION}")));
        }
        let spec = OrderSpec {
            name,
            client,
            reward: reward.unwrap_or(Tokens::whole(100)),
            t0: get_u(e, "t0", 1)?,
            dt_train: get_u(e, "dt_train", 10)?,
            dt_validate: get_u(e, "dt_validate", 5)?,
            dt_challenge: get_u(e, "dt_challenge", 5)?,
            task: TaskSpec::new(dim as u32, get_u(e, "train_seed", seed)?, get_u(e, "test_seed", seed ^ 0x5eed)?),
        };
        for (f, v) in [("dt_train", spec.dt_train), ("dt_validate", spec.dt_validate), ("dt_challenge", spec.dt_challenge)] {
            if v == 0 {
                return Err(invalid(&p(f), "must be positive"));
            }
        }
        if spec.reward.is_zero() {
            return Err(invalid(&p("reward"), "must be positive"));
        }
        orders.push(spec);
    }

    let duration_s = e.uint("run.duration_s")?.unwrap_or(300);
    let port_base = e.uint("run.port_base")?.unwrap_or(7400);
    let port_base = u16::try_from(port_base).map_err(|_| invalid("run.port_base", "not a port"))?;

    let s = Scenario {
        name,
        seed,
        mode,
        consensus,
        bandwidth: bw,
        net,
        agents,
        orders,
        econ,
        funds,
        v_stake,
        c_stake,
        max_orders,
        duration_s,
        port_base,
    };
    validate(&s)?;
    Ok(s)
}

/// Cross-field checks: every role an order depends on is present.
pub fn validate(s: &Scenario) -> Result<(), ConfigError> {
    for o in &s.orders {
        if !s.agents.iter().any(|a| a.name == o.client && a.policy.role == Role::Client) {
            return Err(invalid(&format!("order.{}.client", o.name), format!("no client agent named {:?}", o.client)));
        }
    }
    if !s.orders.is_empty() {
        for (role, key) in [(Role::Miner, "nodes.miners"), (Role::Validator, "nodes.validators")] {
            if s.count(role) == 0 {
                return Err(invalid(key, format!("orders need at least one {}", role.name())));
            }
        }
    }
    for a in &s.agents {
        let min = s.econ.min_stakes.for_role(a.policy.role);
        if a.policy.role != Role::Client && a.deposit < min {
            return Err(invalid(&format!("agent.{}.deposit", a.name), format!("below the {} minimum", a.policy.role.name())));
        }
        if a.deposit > s.funds {
            return Err(invalid(&format!("agent.{}.deposit", a.name), "exceeds economics.funds"));
        }
    }
    Ok(())
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let mut e = Entries::parse(text)?;
    let s = build(&mut e)?;
    e.reject_rest()?;
    Ok(s)
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|err| ConfigError::Io { path: path.display().to_string(), msg: err.to_string() })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    parse_scenario(&read(path)?)
}

/// A scenario plus the axes of a sync-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub base: Scenario,
    pub nodes: Vec<usize>,
    pub bandwidths: Vec<Bandwidth>,
    pub batch_tx: Vec<usize>,
}

impl GridSpec {
    /// Cells in row order: nodes, then bandwidth, then batch size.
    pub fn cells(&self) -> Vec<(usize, Bandwidth, usize)> {
        let mut out = Vec::new();
        for &n in &self.nodes {
            for &b in &self.bandwidths {
                for &t in &self.batch_tx {
                    out.push((n, b, t));
                }
            }
        }
        out
    }
}

pub fn parse_grid(text: &str) -> Result<GridSpec, ConfigError> {
    let mut e = Entries::parse(text)?;
    let usizes = |e: &mut Entries, key: &str, default: &[usize]| -> Result<Vec<usize>, ConfigError> {
        match e.list(key) {
            None => Ok(default.to_vec()),
            Some((line, items)) => items
                .iter()
                .map(|s| match s.parse::<usize>() {
                    Ok(0) => Err(invalid(key, "values must be positive")),
                    Ok(v) => Ok(v),
                    Err(_) => Err(ConfigError::Parse { line, msg: format!("{key}: bad integer {s:?}") }),
                })
                .collect(),
        }
    };
    let nodes = usizes(&mut e, "grid.nodes", &[10, 30, 50])?;
    let batch_tx = usizes(&mut e, "grid.batch_tx", &[100, 1000])?;
    let bandwidths = match e.list("grid.bandwidth") {
        None => Bandwidth::TABLE.to_vec(),
        Some((_, items)) => items.iter().map(|s| bandwidth("grid.bandwidth", s)).collect::<Result<_, _>>()?,
    };
    if !e.0.contains_key("orders") && e.names("order").is_empty() {
        e.0.insert("orders".into(), (0, "0".into()));
    }
    let base = build(&mut e)?;
    e.reject_rest()?;
    if nodes.is_empty() || batch_tx.is_empty() || bandwidths.is_empty() {
        return Err(invalid("grid", "every axis needs at least one value"));
    }
    Ok(GridSpec { base, nodes, bandwidths, batch_tx })
}

pub fn load_grid(path: &Path) -> Result<GridSpec, ConfigError> {
    parse_grid(&read(path)?)
}
