use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"{
    "graph": {"kind": "random", "n": 5, "p": 0.5, "seed": 3},
    "dataset": {"kind": "synth", "n_examples": 150, "dim": 4, "n_classes": 3, "n_test": 50},
    "strategy": "dtur",
    "k": 40,
    "batch": 8,
    "seed": 7,
    "replications": 2
}"#;

fn dybw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dybw")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_records_and_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let o = dybw(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [7, 8] {
        let csv = fs::read_to_string(out.join(format!("records_{seed}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,loss,test_error,disagreement,duration,theta,mean_backup,max_backup"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 40);
        assert!(rows.iter().all(|r| r.split(',').count() == 8));
        let summary = read_json(&out.join(format!("summary_{seed}.json")));
        assert_eq!(summary["strategy"], "dtur");
        assert_eq!(summary["seed"], seed);
        assert!(summary["final_loss"].as_f64().unwrap() > 0.0);
        assert!(summary["consensus_phase_iters"].is_u64());
    }
}

#[test]
fn override_changes_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let o = dybw(&[
        "simulate",
        "--config",
        &cfg,
        "--override",
        "strategy=full",
        "--override",
        "replications=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("summary_7.json"))["strategy"], "full");
    assert!(!out.join("summary_8.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let mut runs = Vec::new();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = dybw(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
            "--log-delays",
            "--log-plans",
            "--dump-matrices",
        ]);
        assert!(o.status.success());
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        runs.push(files);
    }
    assert_eq!(runs[0].len(), 10);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn compare_reports_all_strategies_on_shared_delays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let o = dybw(&[
        "compare",
        "--config",
        &cfg,
        "--override",
        "epsilon_target=0.0001",
        "--out",
        out.to_str().unwrap(),
        "--log-delays",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("compare_7.json"));
    let full = report["full"]["mean_duration"].as_f64().unwrap();
    let dtur = report["dtur"]["mean_duration"].as_f64().unwrap();
    assert!(dtur <= full);
    assert_eq!(report["full"]["duration_ratio_vs_full"], 1.0);
    assert!(report["static_p"]["duration_ratio_vs_full"].as_f64().unwrap() <= 1.0);
    // unreachable target
    assert!(report["dtur"]["time_to_target"].is_null());
    assert!(report["dtur"]["iterations_to_target"].is_null());

    let delays = |s: &str| fs::read(out.join(format!("delays_{s}_7.csv"))).unwrap();
    assert_eq!(delays("full"), delays("dtur"));
    assert_eq!(delays("full"), delays("static_p"));
}

#[test]
fn check_passes_and_detects_injected_asymmetry() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let ok = dybw(&["check", "--config", &cfg]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let table = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(!table.contains("FAIL"));

    let bad = dybw(&["check", "--config", &cfg, "--inject-asymmetry"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let disconnected = CONFIG.replace(
        r#"{"kind": "random", "n": 5, "p": 0.5, "seed": 3}"#,
        r#"{"kind": "explicit", "n": 4, "edges": [[0, 1], [2, 3]]}"#,
    );
    let cfg = write_config(tmp.path(), &disconnected);
    let o = dybw(&["check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph not connected"));

    let cfg = write_config(tmp.path(), &CONFIG.replace("\"k\": 40", "\"foo\": 40"));
    let o = dybw(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));

    let o = dybw(&[
        "simulate",
        "--config",
        tmp.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = dybw(&["simulate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("default.json");
    let o = dybw(&["gen-config", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let doc = read_json(&path);
    assert!(doc["_comment"].is_array());
    assert_eq!(doc["k"], 500);
    assert_eq!(doc["eta"]["eta0"], 0.2);

    let stdout = dybw(&["gen-config"]);
    assert_eq!(stdout.stdout, fs::read(&path).unwrap());

    let out = tmp.path().join("out");
    let o = dybw(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--override",
        "k=5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("records_42.csv").exists());
}
