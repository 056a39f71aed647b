//! Acceptance gate: one PASS/FAIL line per criterion, all must pass.

use plasma_branch::verify::run_all;
use std::path::PathBuf;

#[test]
fn acceptance() {
    let scratch = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let results = run_all(&scratch, true).expect("acceptance suite must complete");
    let mut all_pass = true;
    for r in &results {
        let flag = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {:02} {flag} [{:7.1}s] {}: {}",
            r.index,
            r.wall_ms / 1e3,
            r.name,
            r.detail
        );
        all_pass &= r.passed;
    }
    assert!(all_pass, "acceptance criteria failed");
}
