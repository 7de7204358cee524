//! End-to-end tests against the compiled binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench-oracle"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a small dataset, ingests it, and returns (dir, store path).
fn seeded_store(dir: &Path) -> PathBuf {
    let csv = dir.join("bench.csv");
    let out = run_in(
        dir,
        &[
            "generate",
            "--size",
            "12x8",
            "--true-rank",
            "3",
            "--seed",
            "5",
            "--out",
            csv.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let store = dir.join("store.json");
    let out = run_in(
        dir,
        &[
            "--store",
            store.to_str().unwrap(),
            "ingest",
            csv.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("ingested 12 techniques x 8 devices, 96 observed"));
    store
}

fn write_measurements(dir: &Path, rows: usize) -> PathBuf {
    let path = dir.join("meas.csv");
    let mut text = String::from("counterpart,value\n");
    for i in 0..rows {
        text.push_str(&format!("technique_{i:02},{}\n", 1.0 + i as f64 / 8.0));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_reports_counts_and_predict_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "predict",
            "technique_03",
            "device_2",
        ],
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("(measured)"));
}

#[test]
fn predict_unknown_device_lists_count() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "predict",
            "technique_03",
            "no_such_device",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("8 devices registered"));
}

#[test]
fn ingest_missing_file_is_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["ingest", "no_such.csv"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn ingest_malformed_csv_leaves_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "technique,d0\nt0,abc\n").unwrap();
    let store = dir.path().join("store.json");
    let out = run_in(
        dir.path(),
        &["--store", store.to_str().unwrap(), "ingest", bad.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row 2"));
    assert!(!store.exists());
}

#[test]
fn intent_device_workflow_runs_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let meas = write_measurements(dir.path(), 12);
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "--epochs",
            "200",
            "intent",
            "add device edge_100 to domain warehouse_5",
            "--measurements",
            meas.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // structured JSON line with the contract key names
    assert!(text.contains(
        r#"{"intent_name":"adding device","device":"edge_100","domain":"warehouse_5"}"#
    ));
    assert!(text.contains("recommender triggered: yes"));
    assert!(text.contains("measured"));
    assert!(text.contains("predicted"));

    // predictions are now served from the store
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "--format",
            "json",
            "predict",
            "technique_00",
            "edge_100",
        ],
    );
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(value["device"], "edge_100");
    assert!(value["source"] == "measured" || value["source"] == "predicted");
}

#[test]
fn intent_parse_failure_exit_code_and_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["intent", "delete device x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nearest template"));
}

#[test]
fn intent_policy_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let meas = write_measurements(dir.path(), 12);
    let args = [
        "--store",
        store.to_str().unwrap(),
        "--epochs",
        "150",
        "intent",
        "add device edge_1 to domain lab",
        "--measurements",
        meas.to_str().unwrap(),
    ];
    let out = run_in(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    // same intent again: the device now exists, policy fails
    let out = run_in(dir.path(), &args);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("alert"));
}

#[test]
fn intent_without_measurements_is_measurement_failure() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "intent",
            "add device edge_2 to domain lab",
        ],
    );
    assert_eq!(out.status.code(), Some(7));
    assert!(stderr(&out).contains("--measurements"));
}

#[test]
fn intent_repl_reads_stdin_lines() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let meas = write_measurements(dir.path(), 12);
    let mut child = bin()
        .current_dir(dir.path())
        .args([
            "--store",
            store.to_str().unwrap(),
            "--epochs",
            "150",
            "intent",
            "--measurements",
            meas.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"bogus line\nadd device edge_9 to domain lab\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    // REPL keeps going after a bad line and exits 0 at EOF
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("no intent template matches"));
    assert!(stdout(&out).contains(r#""device":"edge_9""#));
}

#[test]
fn add_technique_direct_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded_store(dir.path());
    let meas = dir.path().join("tech_meas.csv");
    let mut text = String::from("counterpart,value\n");
    for j in 0..8 {
        text.push_str(&format!("device_{j},{}\n", 0.5 + j as f64 / 4.0));
    }
    std::fs::write(&meas, text).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "--store",
            store.to_str().unwrap(),
            "--epochs",
            "200",
            "--format",
            "json",
            "add-technique",
            "MobileNet-V2",
            "--type",
            "threat-detection",
            "--k",
            "3",
            "--measurements",
            meas.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["subject"], "MobileNet-V2");
    assert_eq!(report["measured"].as_array().unwrap().len(), 3);
    assert_eq!(report["predicted"].as_array().unwrap().len(), 5);
}

#[test]
fn experiment_synthetic_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("exp.csv");
    let out = run_in(
        dir.path(),
        &[
            "--seed",
            "1",
            "--epochs",
            "120",
            "experiment",
            "--synthetic",
            "10x8",
            "--true-rank",
            "2",
            "--fractions",
            "0.3:0.5:0.1",
            "--reps",
            "2",
            "--out",
            out_csv.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let detail = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(
        detail.lines().next().unwrap(),
        "missing_fraction,replication,target_device,rmse,normalized_rmse,train_seconds"
    );
    assert_eq!(detail.lines().count(), 1 + 3 * 2);
    let summary = std::fs::read_to_string(dir.path().join("exp_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(stdout(&out).contains("missing_fraction"));
}

#[test]
fn experiment_rejects_zero_reps() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "experiment",
            "--synthetic",
            "10x8",
            "--true-rank",
            "2",
            "--reps",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("replications"));
}

#[test]
fn experiment_detail_csv_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| -> String {
        let path = dir.path().join(name);
        let out = run_in(
            dir.path(),
            &[
                "--seed",
                "9",
                "--epochs",
                "100",
                "experiment",
                "--synthetic",
                "10x8",
                "--true-rank",
                "2",
                "--fractions",
                "0.4",
                "--reps",
                "2",
                "--out",
                path.to_str().unwrap(),
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(&path).unwrap()
    };
    let a = run_once("a.csv");
    let b = run_once("b.csv");
    let strip_timing = |text: &str| -> Vec<String> {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(r, _)| r.to_string()).unwrap_or_default())
            .collect()
    };
    assert_eq!(strip_timing(&a), strip_timing(&b));
}

#[test]
fn store_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = run_in(
        dir.path(),
        &["generate", "--size", "6x5", "--true-rank", "2", "--out", csv.to_str().unwrap()],
    );
    assert!(out.status.success());
    let store = dir.path().join("env_store.json");
    let out = bin()
        .current_dir(dir.path())
        .env("BENCH_ORACLE_STORE", store.to_str().unwrap())
        .args(["ingest", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(store.exists());
}
