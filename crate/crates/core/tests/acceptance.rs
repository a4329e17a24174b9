//! Runs every acceptance criterion at its stated tolerance, one line each.

use std::process::ExitCode;

use mimo_bc::acceptance::{format_line, run_criterion, AcceptanceConfig, TITLES};

fn main() -> ExitCode {
    let cfg = AcceptanceConfig::default();
    let mut failed = 0;
    for id in 1..=TITLES.len() {
        let outcome = run_criterion(id, &cfg);
        println!("{}", format_line(&outcome));
        if !outcome.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", TITLES.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
