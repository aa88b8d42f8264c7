//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or runs over its time budget.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use pot_core::agents::Honesty;
use pot_core::config::load_scenario;
use pot_core::economics::{settlement_cost, GasModel};
use pot_core::netsim::{Bandwidth, NetConfig};
use pot_core::ledger::Outcome;
use pot_core::pbft::{Fault, NodeId};
use pot_core::protocol::SplitParams;
use pot_core::records::Tokens;
use pot_core::report::{scenario_row, table3, table4_cell, table5_csv, TABLE4_ROWS};
use pot_core::scenario::{agent_key, run_scenario, with_adversary, Mode, Scenario};
use pot_core::sync::{run_with_fault, SyncStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1
fn pbft_agreement_under_faults() -> Verdict {
    let mut runs = 0;
    for n in [4usize, 7, 10] {
        for node in 0..n as NodeId {
            for fault in Fault::ALL {
                for seed in 0..100 {
                    let bw = if seed % 2 == 0 { Bandwidth::Fast } else { Bandwidth::Medium };
                    let r = run_with_fault(n, Some((node, fault)), NetConfig::wan(bw, seed));
                    ensure(r.agreement && r.prefix_consistent, || format!("n={n} node={node} {fault:?} seed={seed}: {r:?}"))?;
                    runs += 1;
                }
            }
        }
    }
    Ok(format!("{runs} runs, 0 violations"))
}

// 2
fn quorum_thresholds() -> Verdict {
    for n in [4, 7, 10, 13, 31] {
        check_replica_quorums(n);
        check_reply_quorum(n);
    }
    Ok("n in {4,7,10,13,31}: prepare 2f, commit 2f+1, reply f+1".into())
}

// 3
fn table4_scaling() -> Verdict {
    let seed = 1;
    let secs = |tx, nodes, bw| {
        let r = table4_cell(tx, nodes, bw, seed);
        (r.status == SyncStatus::Completed).then_some(r.sync_seconds)
    };
    let t100 = secs(100, 30, Bandwidth::Slow).ok_or("slow 100/30 halted")?;
    let t1000 = secs(1000, 30, Bandwidth::Slow).ok_or("slow 1000/30 halted")?;
    let ratio = t1000 / t100;
    ensure((6.5..=10.5).contains(&ratio), || format!("T1000/T100 = {ratio:.2}"))?;
    let mut worst_spread: f64 = 0.0;
    let mut min_slow_ratio = f64::INFINITY;
    for (tx, nodes, _) in TABLE4_ROWS {
        let m = secs(tx, nodes, Bandwidth::Medium).ok_or_else(|| format!("medium {tx}/{nodes} halted"))?;
        let f = secs(tx, nodes, Bandwidth::Fast).ok_or_else(|| format!("fast {tx}/{nodes} halted"))?;
        if tx <= 5000 {
            let spread = m.max(f) / m.min(f) - 1.0;
            ensure(spread < 0.3, || format!("{tx}/{nodes}: medium {m:.3} vs fast {f:.3}"))?;
            worst_spread = worst_spread.max(spread);
        }
        // A halted slow cell is slower than any bound.
        if let Some(s) = secs(tx, nodes, Bandwidth::Slow) {
            ensure(s >= 4.0 * m, || format!("{tx}/{nodes}: slow {s:.3} < 4 x medium {m:.3}"))?;
            min_slow_ratio = min_slow_ratio.min(s / m);
        }
    }
    Ok(format!("T1000/T100 = {ratio:.2}, medium/fast spread <= {:.0}%, slow >= {min_slow_ratio:.1} x medium", worst_spread * 100.0))
}

// 4
fn table3_trend() -> Verdict {
    let rows = table3(1, Mode::SimulatedNetwork, 0);
    let mut ratios = Vec::new();
    for r in &rows {
        let s: Vec<f64> = r.seconds.iter().map(|x| x.ok_or("localhost cell halted")).collect::<Result<_, _>>()?;
        ensure(s.windows(2).all(|w| w[0] <= w[1]), || format!("{}/{}: not monotone {s:?}", r.orders, r.validations))?;
        let ratio = s[2] / s[0];
        ensure((5.0..=20.0).contains(&ratio), || format!("{}/{}: T100/T10 = {ratio:.2}", r.orders, r.validations))?;
        ratios.push(ratio);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(format!("{} rows monotone, T100/T10 in [{lo:.2}, {hi:.2}]", rows.len()))
}

// 5
fn missing_cell_timeout() -> Verdict {
    let slow = table4_cell(10_000, 50, Bandwidth::Slow, 1);
    ensure(matches!(slow.status, SyncStatus::LivenessHalt(_)), || format!("slow cell {:?}", slow.status))?;
    let fast = table4_cell(10_000, 50, Bandwidth::Fast, 1);
    ensure(fast.status == SyncStatus::Completed, || format!("fast cell {:?}", fast.status))?;
    ensure(fast.sync_seconds < 5.0, || format!("fast cell took {:.3} s", fast.sync_seconds))?;
    Ok(format!("slow halted ({}), fast {:.3} s", slow.status.label(), fast.sync_seconds))
}

// 6
fn theft_impossible() -> Verdict {
    let mut thief_rejections = 0;
    for seed in 0..1000 {
        let s = with_adversary(seed, Honesty::Thief);
        let r = run_scenario(&s, false, false).map_err(|e| format!("seed {seed}: {e}"))?;
        let o = &r.orders[0];
        ensure(o.winner.as_deref() != Some("adversary"), || format!("seed {seed}: thief won"))?;
        let Some(Outcome::Winner { score, .. }) = &o.outcome else {
            return Err(format!("seed {seed}: no winner"));
        };
        let oracle = argmax_oracle(&s, &r.log);
        let (best, _) = &oracle[&o.oid];
        ensure(score == best, || format!("seed {seed}: winner {score:?} vs argmax {best:?}"))?;
        thief_rejections += r.rejections_of("adversary").count();
    }
    ensure(thief_rejections > 0, || "the thief never acted".into())?;
    Ok(format!("1000 scenarios, 0 thief wins, {thief_rejections} thief txs rejected"))
}

// 7
fn window_enforcement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut accepted = 0;
    for i in 0..10_000 {
        let c = WindowCase::random(&mut rng);
        let want = c.expected();
        ensure(c.actual() == want && c.phase_agrees(), || format!("trial {i}: {c:?}"))?;
        accepted += want as usize;
    }
    Ok(format!("10000 trials agree ({accepted} accepted)"))
}

// 8
fn finalize_oracle_match() -> Verdict {
    let cases = exhaustive_cases(5, 3);
    for (i, models) in cases.iter().enumerate() {
        check_finalize(987_654_321, SplitParams::default(), models).map_err(|e| format!("exhaustive case {i}: {e}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..5000 {
        let (reward, models) = random_case(&mut rng);
        let split = SplitParams { tax_bps: rng.gen_range(0..=1000), validator_share_bps: rng.gen_range(0..=5000) };
        check_finalize(reward, split, &models).map_err(|e| format!("random case {i}: {e}"))?;
    }
    Ok(format!("{} exhaustive + 5000 random instances", cases.len()))
}

// 9
fn challenge_economics() -> Verdict {
    let (mut lies, mut false_challenges, mut scenarios) = (0, 0, 0);
    let mut check = |s: &Scenario, adversaries: &[&str]| -> Result<(), String> {
        let r = run_scenario(s, false, false).map_err(|e| e.to_string())?;
        let a = dispute_audit(s, &r.log);
        let tag = &s.name;
        ensure(r.conserved(), || format!("{tag}: tokens not conserved"))?;
        ensure(a.unchallenged_lies().count() == 0, || format!("{tag}: unchallenged lie"))?;
        ensure(r.slashes == a.lies.len(), || format!("{tag}: {} slashes for {} lies", r.slashes, a.lies.len()))?;
        ensure(r.challenges == a.challenged.len(), || format!("{tag}: challenge count"))?;
        for name in adversaries {
            let pk = agent_key(s.seed, name).public_key();
            let n_lies = a.lies.values().filter(|v| **v == pk).count() as u64;
            let n_false = a.false_challenges().filter(|(_, c)| *c == pk).count() as u64;
            let expect = Tokens(r.wealth_before[*name].0 - s.v_stake.0 * n_lies - s.c_stake.0 * n_false);
            ensure(r.wealth_after[*name] == expect, || format!("{tag}: {name} ended with {} not {expect}", r.wealth_after[*name]))?;
        }
        lies += a.lies.len();
        false_challenges += a.false_challenges().count();
        scenarios += 1;
        Ok(())
    };
    for seed in 0..100 {
        for h in [Honesty::LyingValidator, Honesty::FalseChallenger] {
            let mut s = with_adversary(seed, h);
            s.name = format!("{h:?}/{seed}");
            check(&s, &["adversary"])?;
        }
    }
    // Several liars and several trolls in one market.
    for seed in 0..20 {
        let mut s = with_adversary(seed, Honesty::LyingValidator);
        let extra = [("liar1", Honesty::LyingValidator), ("troll0", Honesty::FalseChallenger), ("troll1", Honesty::FalseChallenger)];
        let template = s.agents.iter().find(|a| a.name == "adversary").unwrap().clone();
        let verifier = s.agents.iter().find(|a| a.name == "verifier0").unwrap().clone();
        for (name, h) in extra {
            let mut a = if h == Honesty::FalseChallenger { verifier.clone() } else { template.clone() };
            a.name = name.into();
            a.policy.honesty = h;
            s.agents.push(a);
        }
        s.name = format!("crowd/{seed}");
        check(&s, &["adversary", "liar1", "troll0", "troll1"])?;
    }
    ensure(lies > 0 && false_challenges > 0, || format!("{lies} lies, {false_challenges} false challenges"))?;
    Ok(format!("{scenarios} scenarios: {lies} lies all slashed, {false_challenges} false challenges forfeited"))
}

// 10
fn settlement_cost_formula() -> Verdict {
    let gas = GasModel::default();
    let want = [(gas.propose_gas, "0.000396"), (gas.confirm_gas, "0.000207"), (gas.execute_gas, "0.000739")];
    for (g, w) in want {
        let got = format!("{:.6}", gas.cost_of(g).tokens);
        ensure(got == w, || format!("{g} gas -> {got}, table says {w}"))?;
    }
    let total = settlement_cost(&gas, 30);
    ensure(total.gas == 1_609_893, || format!("k=30 total {} gas", total.gas))?;
    let usd = format!("{:.2}", total.usd);
    ensure(usd == "1.81", || format!("k=30 total ${usd}"))?;
    let csv = table5_csv(&gas, 30);
    ensure(csv.contains("1.87") && csv.contains("1609893"), || "table5 lacks the discrepancy note".into())?;
    Ok(format!("rows match, k=30 total {} gas = {:.6} tokens = ${usd} (published total $1.87)", total.gas, total.tokens))
}

// 11
fn determinism() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut checked = Vec::new();
    for name in ["basic.conf", "adversarial.conf"] {
        let s = load_scenario(&dir.join(name)).map_err(|e| e.to_string())?;
        let render = || -> Result<(String, String, String), String> {
            let r = run_scenario(&s, true, true).map_err(|e| e.to_string())?;
            let trace = r.trace.as_ref().ok_or("no trace recorded")?.to_csv();
            Ok((scenario_row(&s, &r).csv(), r.chain.receipts_csv(), trace))
        };
        let (a, b) = (render()?, render()?);
        ensure(a == b, || format!("{name}: outputs differ between runs"))?;
        checked.push(format!("{name} ({} trace lines)", a.2.lines().count()));
    }
    Ok(checked.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("PBFT agreement under faults", Duration::from_secs(120), pbft_agreement_under_faults),
        ("Quorum thresholds", Duration::from_secs(1), quorum_thresholds),
        ("Bandwidth-bound scaling", Duration::from_secs(60), table4_scaling),
        ("Network-size trend", Duration::from_secs(60), table3_trend),
        ("Missing-cell timeout", Duration::from_secs(60), missing_cell_timeout),
        ("Commit-reveal theft impossibility", Duration::from_secs(120), theft_impossible),
        ("Timing-window enforcement", Duration::from_secs(30), window_enforcement),
        ("Finalize vs brute-force oracle", Duration::from_secs(30), finalize_oracle_match),
        ("Challenge economics", Duration::from_secs(60), challenge_economics),
        ("Settlement cost formula", Duration::from_secs(1), settlement_cost_formula),
        ("Determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let res = match res {
            Ok(detail) if took > budget => Err(format!("{detail}; over budget of {budget:?}")),
            other => other,
        };
        match res {
            Ok(detail) => println!("PASS {:>2} {name} [{:.2} s] {detail}", i + 1, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{:.2} s] {why}", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
