use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pot_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let mut len = 0;
    unsafe { pot_last_error(buf.as_mut_ptr(), buf.len(), &mut len) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn read(f: unsafe extern "C" fn(*const PotRun, *mut std::ffi::c_char, usize, *mut usize) -> PotStatus, r: *const PotRun) -> Result<String, PotStatus> {
    let mut len = 0;
    let st = unsafe { f(r, ptr::null_mut(), 0, &mut len) };
    if st != PotStatus::BufferTooSmall {
        return Err(st);
    }
    let mut buf = vec![0u8; len + 1];
    let st = unsafe { f(r, buf.as_mut_ptr().cast(), buf.len(), &mut len) };
    assert_eq!(st, PotStatus::Ok);
    buf.truncate(len);
    Ok(String::from_utf8(buf).unwrap())
}

fn parse(text: &str) -> Result<*mut PotScenario, PotStatus> {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    match unsafe { pot_scenario_parse(c.as_ptr(), &mut s) } {
        PotStatus::Ok => Ok(s),
        e => Err(e),
    }
}

fn run(s: *const PotScenario, consensus: bool) -> *mut PotRun {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { pot_run(s, consensus, &mut r) }, PotStatus::Ok, "{}", last_error());
    r
}

#[test]
fn run_and_read_outputs() {
    let s = parse("seed = 5\n").unwrap();
    let r = run(s, true);
    let report = read(pot_run_report_csv, r).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().nth(1).unwrap().ends_with(",ok"));
    assert!(read(pot_run_receipts_csv, r).unwrap().lines().count() > 1);

    let trace = CString::new(read(pot_run_trace_csv, r).unwrap()).unwrap();
    let mut rounds = 0;
    assert_eq!(unsafe { pot_verify_trace(trace.as_ptr(), &mut rounds) }, PotStatus::Ok);
    assert!(rounds > 0);

    let (mut c, mut sl, mut conserved) = (9, 9, false);
    assert_eq!(unsafe { pot_run_disputes(r, &mut c, &mut sl, &mut conserved) }, PotStatus::Ok);
    assert_eq!((c, sl, conserved), (0, 0, true));
    unsafe {
        pot_run_free(r);
        pot_scenario_free(s);
    }
}

#[test]
fn same_seed_same_report_across_the_boundary() {
    let s = parse("seed = 1\n").unwrap();
    let a = run(s, true);
    let b = run(s, true);
    assert_eq!(read(pot_run_trace_csv, a), read(pot_run_trace_csv, b));
    unsafe { pot_scenario_set_seed(s, 2) };
    let c = run(s, true);
    assert_ne!(read(pot_run_report_csv, a), read(pot_run_report_csv, c));
    unsafe {
        for r in [a, b, c] {
            pot_run_free(r);
        }
        pot_scenario_free(s);
    }
}

#[test]
fn trace_is_unavailable_without_consensus() {
    let s = parse("seed = 1\n").unwrap();
    let r = run(s, false);
    assert_eq!(read(pot_run_trace_csv, r), Err(PotStatus::Unavailable));
    unsafe {
        pot_run_free(r);
        pot_scenario_free(s);
    }
}

#[test]
fn errors_carry_messages() {
    assert_eq!(parse("seed = 1\nconsensus.n = 0\n"), Err(PotStatus::Config));
    assert!(last_error().contains("consensus.n"), "{}", last_error());

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pot_scenario_parse(ptr::null(), &mut s) }, PotStatus::NullArgument);
    assert_eq!(unsafe { pot_run(ptr::null(), false, ptr::null_mut()) }, PotStatus::NullArgument);
    assert_eq!(unsafe { pot_verify_trace(ptr::null(), ptr::null_mut()) }, PotStatus::NullArgument);

    let bad = [0xffu8, 0];
    assert_eq!(unsafe { pot_scenario_parse(bad.as_ptr().cast(), &mut s) }, PotStatus::InvalidUtf8);

    let path = CString::new("/nonexistent/x.conf").unwrap();
    assert_eq!(unsafe { pot_scenario_load(path.as_ptr(), &mut s) }, PotStatus::Config);

    let junk = CString::new("a,b\n1\n").unwrap();
    assert_eq!(unsafe { pot_verify_trace(junk.as_ptr(), ptr::null_mut()) }, PotStatus::Trace);

    // Freeing null is a no-op.
    unsafe {
        pot_scenario_free(ptr::null_mut());
        pot_run_free(ptr::null_mut());
    }
    let name = unsafe { CStr::from_ptr(pot_status_name(PotStatus::BufferTooSmall)) };
    assert_eq!(name.to_str().unwrap(), "buffer too small");
}

#[test]
fn settlement_cost_for_thirty_signers() {
    let (mut gas, mut tokens, mut usd) = (0, 0.0, 0.0);
    assert_eq!(unsafe { pot_settlement_cost(30, &mut gas, &mut tokens, &mut usd) }, PotStatus::Ok);
    assert_eq!(gas, 1_609_893);
    assert_eq!(format!("{usd:.2}"), "1.81");
}

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_exported_functions() {
    let header = std::fs::read_to_string(crate_dir().join("include/pot.h")).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 10);
    for f in exported {
        assert!(header.contains(&format!("{f}(")), "{f} missing from pot.h");
    }
    assert!(header.contains("typedef struct PotScenario PotScenario;"));
    assert!(header.contains("POT_STATUS_OK = 0"));
}

fn static_lib() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    let profile_dir = std::env::current_exe().ok()?.parent()?.parent()?.to_path_buf();
    let lib = profile_dir.join("libpot_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(lib) = static_lib() else {
        eprintln!("skipping: libpot_ffi.a not built");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("rounds=") && stdout.contains("gas=1609893 usd=1.81"), "{stdout}");
}
