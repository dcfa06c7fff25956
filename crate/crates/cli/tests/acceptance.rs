//! Acceptance criteria, one status line each.
//!
//! Lines go straight to the stderr handle so they show up even when the
//! harness captures output.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use spinflip_ldp::verify::{run_check, VerifyConfig, CHECK_COUNT};

const BIN: &str = env!("CARGO_BIN_EXE_spinflip");

fn report(id: u32, name: &str, passed: bool, detail: &str, secs: f64) {
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {id:>2} {name:<22} {} ({secs:.1}s) {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
}

/// Runs `verify` on the shipped default config at two worker counts and
/// compares every output byte.
fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let dir = tmp.path().join(format!("w{workers}"));
        let out = Command::new(BIN)
            .args(["verify", "--workers", workers, "--out-dir"])
            .arg(&dir)
            .output()
            .unwrap();
        if !out.status.success() {
            return (false, format!("verify exited with {:?} at {workers} workers", out.status.code()));
        }
        let stdout = String::from_utf8_lossy(&out.stdout).replace(&dir.display().to_string(), "<out>");
        outputs.push((std::fs::read(dir.join("verify.csv")).unwrap(), stdout));
    }
    let same_file = outputs[0].0 == outputs[1].0;
    let same_stdout = outputs[0].1 == outputs[1].1;
    (
        same_file && same_stdout,
        format!(
            "verify.csv {} bytes; identical at 1 and 3 workers: file {same_file}, summary {same_stdout}",
            outputs[0].0.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let cfg = VerifyConfig::default();
    let mut failed = Vec::new();
    for id in 1..=CHECK_COUNT {
        let start = Instant::now();
        let r = run_check(id, &cfg).unwrap();
        report(id, &r.name, r.passed, &r.detail, start.elapsed().as_secs_f64());
        if !r.passed {
            failed.push(id);
        }
    }
    let start = Instant::now();
    let (ok, detail) = determinism();
    report(12, "determinism", ok, &detail, start.elapsed().as_secs_f64());
    if !ok {
        failed.push(12);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
