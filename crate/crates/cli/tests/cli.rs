use std::path::Path;
use std::process::{Command, Output};

use rvp::formats::{dataset_from_str, table_from_csv};

fn rvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvp")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tune_prints_six_significant_digits() {
    let o = rvp(&["tune", "--gamma", "0.025", "--n", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "1.13159");

    let o = rvp(&["tune", "--gamma", "0.5", "--n", "9"]);
    assert_eq!(stdout(&o).trim(), "0.00000");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(rvp(&["tune", "--gamma", "1.5", "--n", "3"]).status.code(), Some(2));
    assert_eq!(rvp(&["tune", "--gamma", "0.1", "--n", "0"]).status.code(), Some(2));
    assert_eq!(rvp(&["verify", "bogus"]).status.code(), Some(2));
    // experiments and coverage need an explicit seed
    assert_eq!(rvp(&["coverage", "--trials", "1000"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = rvp(&["train", "--seed", "1", "--out", &out, "--method", "sgd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let o = rvp(&["train", "--seed", "1", "--out", &out, "--config", &bad.display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_suites_pass() {
    let o = rvp(&["verify", "prop1", "--instances", "200", "--seed", "7", "--samples", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = rvp(&["verify", "decomposition", "--seed", "3", "--jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<serde_json::Value> =
        stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|v| v["passed"] == true && v["suite"] == "decomposition"));
}

#[test]
fn gen_data_writes_every_domain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = rvp(&["gen-data", "--config", &config("five_domains.toml"), "--seed", "4", "--out", &out, "--m-train", "50", "--m-test", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..5 {
        let ds = dataset_from_str(&std::fs::read_to_string(dir.path().join(format!("train_{i}.csv"))).unwrap()).unwrap();
        assert_eq!(ds.len(), 50);
    }
    for i in 1..=9 {
        let ds = dataset_from_str(&std::fs::read_to_string(dir.path().join(format!("test_p{i}.csv"))).unwrap()).unwrap();
        assert_eq!(ds.len(), 20);
    }
    assert!(!dir.path().join("train_5.csv").exists());
    assert!(dir.path().join("resolved_config.toml").exists());
}

#[test]
fn experiment_reruns_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = rvp(&[
        "experiment",
        "--config",
        &config("example1.toml"),
        "--seed",
        "5",
        "--out",
        &first.display().to_string(),
        "--m-train",
        "1000",
        "--m-test",
        "1000",
        "--epochs",
        "60",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["0.25", "0.5"] {
        let rows = table_from_csv(&std::fs::read_to_string(first.join(format!("peps_{p}/results.csv"))).unwrap()).unwrap();
        assert_eq!(rows.len(), 6);
    }

    let resolved = first.join("resolved_config.toml").display().to_string();
    let o = rvp(&["experiment", "--config", &resolved, "--seed", "5", "--out", &second.display().to_string()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["0.25", "0.5"] {
        for f in ["results.csv", "curves.csv"] {
            let a = std::fs::read(first.join(format!("peps_{p}/{f}"))).unwrap();
            let b = std::fs::read(second.join(format!("peps_{p}/{f}"))).unwrap();
            assert_eq!(a, b, "peps_{p}/{f} differs");
        }
    }
}

#[test]
fn coverage_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = rvp(&["coverage", "--seed", "2", "--out", &out, "--n", "10", "--trials", "2000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("coverage.json")).unwrap()).unwrap();
    assert_eq!(rec["n"], 10);
    assert_eq!(rec["trials"], 2000);
    let cov = rec["empirical_coverage"].as_f64().unwrap();
    assert!((0.9..=1.0).contains(&cov));
}
