use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pot_core::config::{load_grid, load_scenario};
use pot_core::netsim::Trace;
use pot_core::report::{
    grid_csv, run_grid, scenario_row, staking_csv, table3, table3_csv, table4, table4_csv, table5_csv,
};
use pot_core::scenario::{run_scenario, Mode, ScenarioResult};
use pot_core::verify::verify_trace;
use pot_core::workload::Score;

#[derive(Parser)]
#[command(name = "pot", version, about = "Proof-of-training protocol simulator")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Network backend.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Directory for report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// First TCP port in localhost mode.
    #[arg(long, global = true)]
    port_base: Option<u16>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sim,
    Localhost,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sim => Mode::SimulatedNetwork,
            ModeArg::Localhost => Mode::LocalhostTcp,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and print its report row.
    Run { scenario: PathBuf },
    /// Run a sync-time grid and print one row per cell.
    Grid { gridfile: PathBuf },
    /// Print the sync-time, settlement-cost and staking tables.
    Tables,
    /// Check a message trace against the protocol's counting invariants.
    VerifyTrace { trace: PathBuf },
}

struct Failure {
    code: u8,
    kind: &'static str,
    msg: String,
}

fn fail(code: u8, kind: &'static str, msg: impl ToString) -> Failure {
    Failure { code, kind, msg: msg.to_string() }
}

fn write_out(dir: &Option<PathBuf>, name: &str, body: &str) -> Result<(), Failure> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| fail(5, "io", format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| fail(5, "io", format!("{}: {e}", p.display())))
}

fn orders_csv(r: &ScenarioResult) -> String {
    let mut out = String::from("order,oid,winner,score,oracle_best,delivered,reported,settled\n");
    let score = |s: Option<Score>| s.map_or_else(|| "-".to_string(), |s| s.0.to_string());
    for o in &r.orders {
        let won = match &o.outcome {
            Some(pot_core::ledger::Outcome::Winner { score: s, .. }) => Some(*s),
            _ => None,
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.name,
            o.oid.to_hex(),
            o.winner.as_deref().unwrap_or("-"),
            score(won),
            score(o.oracle_best),
            o.delivered,
            o.reported,
            o.settled
        );
    }
    out
}

fn rejections_csv(r: &ScenarioResult) -> String {
    let mut out = String::from("tick,agent,kind,error\n");
    for x in &r.rejections {
        let _ = writeln!(out, "{},{},{},{:?}", x.tick, x.agent, x.kind, x.error);
    }
    out
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<String, Failure> {
    let mut s = load_scenario(path).map_err(|e| fail(2, "config", e))?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(m) = cli.mode {
        s.mode = m.into();
    }
    if let Some(p) = cli.port_base {
        s.port_base = p;
    }
    let trace = cli.out.is_some() && s.mode == Mode::SimulatedNetwork;
    let r = run_scenario(&s, true, trace).map_err(|e| fail(3, "run", e))?;
    let csv = grid_csv(&[scenario_row(&s, &r)]);
    write_out(&cli.out, "report.csv", &csv)?;
    write_out(&cli.out, "orders.csv", &orders_csv(&r))?;
    write_out(&cli.out, "rejections.csv", &rejections_csv(&r))?;
    write_out(&cli.out, "receipts.csv", &r.chain.receipts_csv())?;
    write_out(&cli.out, "ledger.json", &r.ledger.to_json())?;
    if let Some(t) = &r.trace {
        write_out(&cli.out, "trace.csv", &t.to_csv())?;
    }
    Ok(csv)
}

fn cmd_grid(cli: &Cli, path: &Path) -> Result<String, Failure> {
    let mut g = load_grid(path).map_err(|e| fail(2, "config", e))?;
    if let Some(seed) = cli.seed {
        g.base.seed = seed;
    }
    let mode = cli.mode.map_or(g.base.mode, Mode::from);
    let port_base = cli.port_base.unwrap_or(g.base.port_base);
    let csv = grid_csv(&run_grid(&g, mode, port_base));
    write_out(&cli.out, "grid.csv", &csv)?;
    Ok(csv)
}

fn cmd_tables(cli: &Cli) -> Result<String, Failure> {
    let seed = cli.seed.unwrap_or(7);
    let mode = cli.mode.map_or(Mode::SimulatedNetwork, Mode::from);
    let econ = pot_core::economics::EconomicsParams::default();
    let sections = [
        ("table3.csv", table3_csv(&table3(seed, mode, cli.port_base.unwrap_or(7400)))),
        ("table4.csv", table4_csv(&table4(seed))),
        ("table5.csv", table5_csv(&econ.gas, 30)),
        ("staking.csv", staking_csv(&econ.min_stakes, 30, 0.2)),
    ];
    let mut out = String::new();
    for (name, body) in &sections {
        write_out(&cli.out, name, body)?;
        let _ = write!(out, "# {name}\n{body}\n");
    }
    Ok(out)
}

fn cmd_verify(path: &Path) -> Result<String, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(5, "io", format!("{}: {e}", path.display())))?;
    let trace = Trace::from_csv(&text).map_err(|e| fail(2, "trace", e))?;
    let s = verify_trace(&trace).map_err(|e| fail(4, "invariant", e))?;
    Ok(format!("ok rounds={} replicas={} messages={}\n", s.rounds, s.replicas, s.messages))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { scenario } => cmd_run(&cli, scenario),
        Cmd::Grid { gridfile } => cmd_grid(&cli, gridfile),
        Cmd::Tables => cmd_tables(&cli),
        Cmd::VerifyTrace { trace } => cmd_verify(trace),
    };
    match res {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let msg = f.msg.replace('\n', " ");
            eprintln!("error: {}: {msg}", f.kind);
            ExitCode::from(f.code)
        }
    }
}
