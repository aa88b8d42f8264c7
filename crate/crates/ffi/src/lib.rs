//! C interface to `pot-core`.
//!
//! Every function returns a [`PotStatus`]. Objects are opaque handles that
//! the caller releases with the matching `_free` function. On failure the
//! message is kept per thread and read with [`pot_last_error`].
//!
//! Text outputs are copied into caller buffers: pass a buffer and its
//! capacity, and `len` receives the length the full string needs (without
//! the terminating NUL). A short buffer yields `POT_STATUS_BUFFER_TOO_SMALL`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pot_core::config::{load_scenario, parse_scenario};
use pot_core::economics::{settlement_cost, EconomicsParams};
use pot_core::netsim::Trace;
use pot_core::report::{grid_csv, scenario_row};
use pot_core::scenario::{run_scenario, Scenario, ScenarioResult};
use pot_core::verify::verify_trace;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Run = 4,
    Trace = 5,
    Invariant = 6,
    BufferTooSmall = 7,
    Unavailable = 8,
    Panic = 9,
}

/// A parsed scenario.
pub struct PotScenario {
    inner: Scenario,
}

/// The outcome of running a scenario.
pub struct PotRun {
    report: String,
    receipts: String,
    trace: Option<String>,
    challenges: u64,
    slashes: u64,
    conserved: bool,
}

impl PotRun {
    fn new(s: &Scenario, r: &ScenarioResult) -> PotRun {
        PotRun {
            report: grid_csv(&[scenario_row(s, r)]),
            receipts: r.chain.receipts_csv(),
            trace: r.trace.as_ref().map(Trace::to_csv),
            challenges: r.challenges as u64,
            slashes: r.slashes as u64,
            conserved: r.conserved(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl ToString) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

fn fail(status: PotStatus, msg: impl ToString) -> PotStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PotStatus) -> PotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            fail(PotStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, PotStatus> {
    if p.is_null() {
        return Err(fail(PotStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(PotStatus::InvalidUtf8, e))
}

unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, len: *mut usize) -> PotStatus {
    if !len.is_null() {
        *len = s.len();
    }
    if buf.is_null() || cap <= s.len() {
        return fail(PotStatus::BufferTooSmall, format!("need {} bytes plus NUL", s.len()));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    PotStatus::Ok
}

unsafe fn put_scenario(s: Scenario, out: *mut *mut PotScenario) -> PotStatus {
    *out = Box::into_raw(Box::new(PotScenario { inner: s }));
    PotStatus::Ok
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pot_status_name(status: PotStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PotStatus::Ok => c"ok",
        PotStatus::NullArgument => c"null argument",
        PotStatus::InvalidUtf8 => c"invalid utf-8",
        PotStatus::Config => c"config",
        PotStatus::Run => c"run",
        PotStatus::Trace => c"trace",
        PotStatus::Invariant => c"invariant",
        PotStatus::BufferTooSmall => c"buffer too small",
        PotStatus::Unavailable => c"unavailable",
        PotStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Copies the calling thread's last error message.
#[no_mangle]
pub unsafe extern "C" fn pot_last_error(buf: *mut c_char, cap: usize, len: *mut usize) -> PotStatus {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, cap, len))
}

/// Parses scenario text in the `key = value` format.
#[no_mangle]
pub unsafe extern "C" fn pot_scenario_parse(text: *const c_char, out: *mut *mut PotScenario) -> PotStatus {
    guard(|| {
        if out.is_null() {
            return fail(PotStatus::NullArgument, "null output handle");
        }
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_scenario(text) {
            Ok(s) => put_scenario(s, out),
            Err(e) => fail(PotStatus::Config, e),
        }
    })
}

/// Reads and parses a scenario file.
#[no_mangle]
pub unsafe extern "C" fn pot_scenario_load(path: *const c_char, out: *mut *mut PotScenario) -> PotStatus {
    guard(|| {
        if out.is_null() {
            return fail(PotStatus::NullArgument, "null output handle");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(Path::new(path)) {
            Ok(s) => put_scenario(s, out),
            Err(e) => fail(PotStatus::Config, e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pot_scenario_set_seed(s: *mut PotScenario, seed: u64) -> PotStatus {
    match s.as_mut() {
        Some(s) => {
            s.inner.seed = seed;
            PotStatus::Ok
        }
        None => fail(PotStatus::NullArgument, "null scenario"),
    }
}

#[no_mangle]
pub unsafe extern "C" fn pot_scenario_free(s: *mut PotScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs a scenario. With `consensus` set, every batch goes through the
/// replicated ledger and the message trace is kept.
#[no_mangle]
pub unsafe extern "C" fn pot_run(s: *const PotScenario, consensus: bool, out: *mut *mut PotRun) -> PotStatus {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else {
            return fail(PotStatus::NullArgument, "null scenario or output handle");
        };
        match run_scenario(&s.inner, consensus, consensus) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(PotRun::new(&s.inner, &r)));
                PotStatus::Ok
            }
            Err(e) => fail(PotStatus::Run, e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pot_run_free(r: *mut PotRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// The report CSV: a header and one row.
#[no_mangle]
pub unsafe extern "C" fn pot_run_report_csv(r: *const PotRun, buf: *mut c_char, cap: usize, len: *mut usize) -> PotStatus {
    match r.as_ref() {
        Some(r) => copy_out(&r.report, buf, cap, len),
        None => fail(PotStatus::NullArgument, "null run"),
    }
}

/// Settlement receipts from the mock chain.
#[no_mangle]
pub unsafe extern "C" fn pot_run_receipts_csv(r: *const PotRun, buf: *mut c_char, cap: usize, len: *mut usize) -> PotStatus {
    match r.as_ref() {
        Some(r) => copy_out(&r.receipts, buf, cap, len),
        None => fail(PotStatus::NullArgument, "null run"),
    }
}

/// The message trace; `POT_STATUS_UNAVAILABLE` when the run skipped consensus.
#[no_mangle]
pub unsafe extern "C" fn pot_run_trace_csv(r: *const PotRun, buf: *mut c_char, cap: usize, len: *mut usize) -> PotStatus {
    match r.as_ref() {
        Some(PotRun { trace: Some(t), .. }) => copy_out(t, buf, cap, len),
        Some(_) => fail(PotStatus::Unavailable, "run kept no trace"),
        None => fail(PotStatus::NullArgument, "null run"),
    }
}

/// Admitted challenges, upheld challenges and whether tokens were conserved.
#[no_mangle]
pub unsafe extern "C" fn pot_run_disputes(r: *const PotRun, challenges: *mut u64, slashes: *mut u64, conserved: *mut bool) -> PotStatus {
    let Some(r) = r.as_ref() else {
        return fail(PotStatus::NullArgument, "null run");
    };
    if let Some(c) = challenges.as_mut() {
        *c = r.challenges;
    }
    if let Some(s) = slashes.as_mut() {
        *s = r.slashes;
    }
    if let Some(c) = conserved.as_mut() {
        *c = r.conserved;
    }
    PotStatus::Ok
}

/// Checks a trace CSV against the quorum invariants and reports the number
/// of committed rounds.
#[no_mangle]
pub unsafe extern "C" fn pot_verify_trace(csv: *const c_char, rounds: *mut u64) -> PotStatus {
    guard(|| {
        let text = match str_arg(csv) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let trace = match Trace::from_csv(text) {
            Ok(t) => t,
            Err(e) => return fail(PotStatus::Trace, e),
        };
        match verify_trace(&trace) {
            Ok(s) => {
                if let Some(r) = rounds.as_mut() {
                    *r = s.rounds as u64;
                }
                PotStatus::Ok
            }
            Err(e) => fail(PotStatus::Invariant, e),
        }
    })
}

/// Gas, native tokens and dollars for settling one order with `k`
/// confirmations under the default gas model.
#[no_mangle]
pub unsafe extern "C" fn pot_settlement_cost(k: u64, gas: *mut u64, tokens: *mut f64, usd: *mut f64) -> PotStatus {
    let c = settlement_cost(&EconomicsParams::default().gas, k);
    if let Some(g) = gas.as_mut() {
        *g = c.gas;
    }
    if let Some(t) = tokens.as_mut() {
        *t = c.tokens;
    }
    if let Some(u) = usd.as_mut() {
        *u = c.usd;
    }
    PotStatus::Ok
}
