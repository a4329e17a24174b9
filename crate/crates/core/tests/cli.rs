use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimo_bc::region::read_boundary_csv;
use mimo_bc::report::VerificationReport;
use mimo_bc::verifier::WalkthroughReport;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn mimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-bc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn region_scalar_endpoints() {
    let out = mimo(&["region", path(&fixture("scalar_channel.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let rows = read_boundary_csv(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 101);
    let (w0, r0) = &rows[0];
    let (wl, rl) = rows.last().unwrap();
    assert_eq!(w0, &vec![1.0, 0.0]);
    assert_eq!(wl, &vec![0.0, 1.0]);
    assert!((r0.rates[0] - 0.5 * 2f64.ln()).abs() < 1e-9 && r0.rates[1] == 0.0);
    assert!(rl.rates[0] == 0.0 && (rl.rates[1] - 0.5 * 1.5f64.ln()).abs() < 1e-9);
    assert!(stdout(&out).lines().all(|l| !l.contains('\r')));
}

#[test]
fn region_bits_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("boundary.csv");
    let out = mimo(&[
        "region",
        path(&fixture("identity_channel.json")),
        "--grid",
        "21",
        "--bits",
        "--output",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let rows = read_boundary_csv(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(rows.len(), 21);
    // single-user capacities in bits: log2|2I| / 2 = 1 and log2(12/6) / 2 = 0.5
    for (w, r) in &rows {
        assert!(r.rates.iter().all(|v| *v >= 0.0));
        assert!(r.rates[0] <= 1.0 + 1e-9 && r.rates[1] <= 0.5 + 1e-9);
        assert!((w[0].hypot(w[1]) - 1.0).abs() < 1e-9);
    }
    assert!((rows[0].1.rates[0] - 1.0).abs() < 1e-9);
    assert!((rows[20].1.rates[1] - 0.5).abs() < 1e-9);
}

#[test]
fn region_rejects_misordered_channel() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dim":1,"noise_covs":[[[2.0]],[[1.0]]],"input_cap":[[1.0]]}"#).unwrap();
    let out = mimo(&["region", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Sigma_1 <= Sigma_2"));
}

#[test]
fn verify_scalar_fixture_round_trips() {
    let out = mimo(&["verify", path(&fixture("scalar_pair.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let reports: Vec<VerificationReport> = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(reports.iter().all(|r| r.passed));
    let crb = reports.iter().find(|r| r.name == "cramer_rao").unwrap();
    // J = ½(1/2 + 1/4) against Cov(Y|U)⁻¹ = 1/3 at unit noise
    assert!((crb.residual("J - Cov^-1 (min eig)").unwrap() - (0.375 - 1.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn verify_gaussian_source_hits_equality() {
    let out = mimo(&["verify", path(&fixture("gaussian_source.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let reports: Vec<VerificationReport> = serde_json::from_str(&stdout(&out)).unwrap();
    let dembo = reports.iter().find(|r| r.name == "dembo").unwrap();
    assert!(dembo.residual("Dembo equality gap").unwrap().abs() < 1e-12);
    assert!(dembo.notes.contains("equality"));
}

#[test]
fn verify_exit_codes() {
    assert_eq!(mimo(&["verify", path(&fixture("order_violation.json"))]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"dim\": 1, \"weights\": [").unwrap();
    assert_eq!(mimo(&["verify", bad.to_str().unwrap()]).status.code(), Some(2));
    let npsd = dir.path().join("npsd.json");
    std::fs::write(&npsd, r#"{"dim":1,"weights":[1.0],"means":[[0.0]],"comp_covs":[[[-1.0]]]}"#).unwrap();
    assert_eq!(mimo(&["verify", npsd.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mimo(&["verify", "--seed", "x", "a.json"]).status.code(), Some(2));
    assert_eq!(mimo(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn tolerance_plumbing_fails_equality_cases() {
    let out = mimo(&["verify", path(&fixture("gaussian_source.json")), "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn walkthrough_is_deterministic() {
    let input = fixture("scalar_pair.json");
    let args = ["walkthrough", path(&input), "--seed", "42"];
    let a = mimo(&args);
    let b = mimo(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let single = Command::new(env!("CARGO_BIN_EXE_mimo-bc"))
        .args(args)
        .env("MIMO_BC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(single.stdout, a.stdout);
    let report: WalkthroughReport = serde_json::from_str(&stdout(&a)).unwrap();
    assert!(report.dominated && report.seed == 42);
}

#[test]
fn walkthrough_three_users() {
    let out = mimo(&["walkthrough", path(&fixture("three_user.json")), "--samples", "20000"]);
    assert_eq!(out.status.code(), Some(0));
    let report: WalkthroughReport = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report.stages.len(), 2);
    let split = report.split.unwrap();
    assert_eq!(split.len(), 3);
    let total: f64 = split.iter().map(|k| k.get(0, 0)).sum();
    assert!((total - 5.0).abs() <= 1e-9 * 5.0);
}

#[test]
fn walkthrough_rejects_inadmissible_source() {
    let out = mimo(&["walkthrough", path(&fixture("inadmissible.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E[XX^T] <= S"));
}

#[test]
fn bad_thread_setting_is_invalid() {
    let out = Command::new(env!("CARGO_BIN_EXE_mimo-bc"))
        .args(["verify", path(&fixture("scalar_pair.json"))])
        .env("MIMO_BC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
