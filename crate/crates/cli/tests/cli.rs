use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distopf")).current_dir(root()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn pf_prints_one_row_per_bus() {
    let o = run(&["pf", "--case", "crates/core/fixtures/case33bw.m"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 34);
    assert!(lines[0].starts_with("bus,V_mdf[pu]"));
}

#[test]
fn validate_accepts_fixture_and_rejects_missing_file() {
    assert!(run(&["validate", "--case", "crates/core/fixtures/case69.m"]).status.success());
    let o = run(&["validate", "--case", "no/such/case.m"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn opf_summary_reports_objective() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "--format", "json", "opf", "--scenario", "scenarios/single_dg_s1.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(!names.is_empty());
    assert!(names.iter().all(|n| n.ends_with(".json")));
    let summary = std::fs::read_to_string(dir.path().join("opf_summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    let obj = v["ac_cost"].as_f64().unwrap();
    assert!((obj - 122.16).abs() < 0.01, "{obj}");
    assert_eq!(v["status"], "optimal");
}

#[test]
fn reports_are_deterministic() {
    let args = ["price", "--scenario", "scenarios/a1.json", "--mechanism", "both"];
    let a = run(&args);
    let b = run(&["--jobs", "1", "price", "--scenario", "scenarios/a1.json", "--mechanism", "both"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn flags_override_scenario() {
    let o = run(&["opf", "--case", "crates/core/fixtures/case33bw.m", "--psp-v", "1.05", "--dg", "18:1:0.5:25:2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn duplicate_writes_native_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "duplicate", "--case", "crates/core/fixtures/case33bw.m", "--copies", "3", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let file = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let v = run(&["validate", "--case", file.to_str().unwrap()]);
    assert!(v.status.success());
}
