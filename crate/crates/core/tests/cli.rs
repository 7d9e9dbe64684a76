mod common;

use std::fs;
use std::path::Path;

use common::{ambulate, csv_files, SMALL_COHORT, SMALL_CV};

const BIN: &str = env!("CARGO_BIN_EXE_ambulate");

fn run(args: &[&str], dir: &Path) -> std::process::Output {
    ambulate(BIN, args, dir)
}

fn ok(args: &[&str], dir: &Path) {
    let o = run(args, dir);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_and_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"], d.path()).status.code(), Some(0));
    assert_eq!(run(&["evaluate", "--help"], d.path()).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"], d.path()).status.code(), Some(1));
    let o = run(&["evaluate", "--out", "x"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: missing --data"));
}

#[test]
fn invalid_configs_exit_one() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cohort.json"), SMALL_COHORT).unwrap();
    ok(&["synth", "--config", "cohort.json", "--out", "cohort"], d.path());
    fs::write(d.path().join("bad.json"), r#"{"learning_rate":-1}"#).unwrap();
    fs::write(d.path().join("typo.json"), r#"{"train":{"epoch":3}}"#).unwrap();
    for cfg in ["bad.json", "typo.json"] {
        let o = run(&["evaluate", "--data", "cohort", "--config", cfg, "--out", "ev"], d.path());
        assert_eq!(o.status.code(), Some(1), "{cfg}");
    }
    let o = run(&["evaluate", "--data", "missing-dir", "--out", "ev"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn end_to_end_commands_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("cohort.json"), SMALL_COHORT).unwrap();
    fs::write(p.join("cv.json"), SMALL_CV).unwrap();
    fs::write(p.join("fit.json"), r#"{"train":{"epochs":2,"batch_size":32}}"#).unwrap();
    ok(&["synth", "--config", "cohort.json", "--out", "cohort", "--seed", "4"], p);
    assert!(p.join("cohort/epochs.bin").exists() && p.join("cohort/bursts.csv").exists());

    ok(&["evaluate", "--data", "cohort", "--config", "cv.json", "--out", "ev1", "--seed", "3"], p);
    ok(&["evaluate", "--data", "cohort", "--config", "cv.json", "--out", "ev2", "--seed", "3"], p);
    let (a, b) = (csv_files(&p.join("ev1")), csv_files(&p.join("ev2")));
    assert_eq!(a.len(), 4);
    assert!(a == b, "identically seeded runs differ");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("ev1/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    ok(&["train-har", "--data", "cohort", "--config", "fit.json", "--out", "src", "--holdout", "none"], p);
    ok(&["transfer", "--source", "src", "--target", "cohort", "--mode", "fixed", "--config", "fit.json", "--out", "tl"], p);
    let o = run(&["inspect", "--model", "tl"], p);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("conv1d"));

    ok(&["explain", "--model", "src", "--epochs", "cohort", "--limit", "3", "--svg", "--out", "ex"], p);
    assert!(p.join("ex/summary.csv").exists() && p.join("ex/conservation.csv").exists());
    assert_eq!(fs::read_dir(p.join("ex")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")
    }).count(), 3);

    ok(&["dba", "--preds", "ev1/epoch_preds.csv", "--epochs", "cohort", "--class", "PwMSmod", "--out", "dba/avg.csv"], p);
    assert!(fs::read_to_string(p.join("dba/avg.csv")).unwrap().starts_with("epoch_index,channel,sample_index,value"));
}

#[test]
fn cwt_on_a_raw_trace() {
    let d = tempfile::tempdir().unwrap();
    let mut csv = String::from("t,ax,ay,az\n");
    for i in 0..1500 {
        let t = i as f64 / 100.0;
        let s = (2.0 * std::f64::consts::PI * 2.0 * t).sin();
        csv.push_str(&format!("{t},{},{},{}\n", 0.3 * s, 9.8 + s, 0.2));
    }
    fs::write(d.path().join("trace.csv"), csv).unwrap();
    ok(&["cwt", "--in", "trace.csv", "--out", "cwt/mag.csv"], d.path());
    assert!(!fs::read_to_string(d.path().join("cwt/mag.csv")).unwrap().is_empty());
    assert!(d.path().join("cwt/run_manifest.json").exists());
}
