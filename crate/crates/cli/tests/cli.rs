use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn poasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poasim")).args(args).env_remove("POASIM_OUT_DIR").output().expect("spawn poasim")
}

fn run_to(name: &str, out: &Path, extra: &[&str]) -> Output {
    let s = scenario(name);
    let mut args = vec!["run", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    poasim(&args)
}

fn verdict(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("verdict.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn clean_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("aura_fault_free", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.ndjson", "verdict.json", "metrics.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let header = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(header.starts_with(
        "scenario,seed,protocol,N,throughput_tps,latency_mean_ms,latency_p99_ms,rounds_mean,cap_label,consistency_class,violations"
    ));
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["rounds_mean"], "6.0");
}

#[test]
fn skew_attack_exits_two_unless_expected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("aura_skew_fork", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let v = verdict(dir.path());
    assert_eq!(v["finality"], false);
    assert_eq!(v["cap_label"], "AP");
    assert_eq!(v["consistency_class"], "none");
    let expected = run_to("aura_skew_fork", dir.path(), &["--expect-violation"]);
    assert_eq!(expected.status.code(), Some(0));
    let wrong = run_to("aura_fault_free", dir.path(), &["--expect-violation"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn async_stall_commits_nothing() {
    let dir = tempfile::tempdir().unwrap();
    run_to("pbft_async_stall", dir.path(), &[]);
    let trace = std::fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    assert!(!trace.contains(r#""kind":"commit""#));
    assert!(!trace.contains(r#""kind":"revert""#));
    let v = verdict(dir.path());
    assert_eq!(v["cap_label"], "CP");
    assert_eq!(v["termination_inconclusive"], true);
}

#[test]
fn same_seed_same_trace_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to("clique_concurrent", a.path(), &["--seed", "42"]);
    run_to("clique_concurrent", b.path(), &["--seed", "42"]);
    let ta = std::fs::read(a.path().join("trace.ndjson")).unwrap();
    let tb = std::fs::read(b.path().join("trace.ndjson")).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(verdict(a.path())["seed"], 42);
}

#[test]
fn invalid_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "protocol": "pbft", "N": 2, "seed": 1, "duration_ticks": 10, "network": {"d_min": 1, "d_max": 2}}"#)
        .unwrap();
    let out = poasim(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid scenario"));
    let missing_seed = dir.path().join("noseed.json");
    std::fs::write(&missing_seed, r#"{"name": "x", "protocol": "aura", "N": 4, "duration_ticks": 10, "network": {"d_min": 1, "d_max": 2}}"#)
        .unwrap();
    let out = poasim(&["run", "--scenario", missing_seed.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn env_var_supplies_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("pbft_fault_free");
    let out = Command::new(env!("CARGO_BIN_EXE_poasim"))
        .args(["run", "--scenario", s.to_str().unwrap()])
        .env("POASIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("verdict.json").is_file());
}

#[test]
fn population_sweep_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("aura_fault_free");
    let out = poasim(&[
        "sweep",
        "--scenario",
        s.to_str().unwrap(),
        "--axis",
        "N",
        "--values",
        "4,6,8",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    let rounds: Vec<&str> = rows.iter().map(|r| r["rounds_mean"].as_str()).collect();
    assert_eq!(rounds, ["6.0", "8.0", "10.0"]);
    assert!(dir.path().join("N-6/trace.ndjson").is_file());
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("aura_fault_free");
    let out = poasim(&["sweep", "--scenario", s.to_str().unwrap(), "--axis", "N", "--values", "0,4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    assert_eq!(rows[0]["status"], "failed");
    assert!(!rows[0]["error"].is_empty());
    assert_eq!(rows[1]["status"], "ok");
    assert_eq!(rows[1]["rounds_mean"], "6.0");
}

#[test]
fn abstainer_sweep_forks_at_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("aura_skew_fork");
    poasim(&[
        "sweep",
        "--scenario",
        s.to_str().unwrap(),
        "--axis",
        "adversaries",
        "--values",
        "0..=1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    let classes: Vec<&str> = rows.iter().map(|r| r["consistency_class"].as_str()).collect();
    assert_eq!(classes, ["strong", "none"]);
}

#[test]
fn honest_seed_sweep_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("pbft_fault_free");
    let out = poasim(&["sweep", "--scenario", s.to_str().unwrap(), "--axis", "seed", "--values", "1..=10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r["violations"].is_empty()));
}
