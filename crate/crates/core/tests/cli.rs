use std::process::Command;

use heatsink_pinn::cli::{ErrorRecord, RunManifest};

fn heatsink() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatsink"))
}

#[test]
fn bad_case_file_exits_one_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("bad.json");
    let text = include_str!("../data/cases/A13_4.json").replace("12.5535", "9.0");
    std::fs::write(&case, text).unwrap();
    let out = dir.path().join("out");
    let status = heatsink()
        .args(["train-case", "--epochs", "5", "--case"])
        .arg(&case)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let rec: ErrorRecord = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec.kind, "validation");
    assert!(rec.message.contains("outlet temperature"), "{}", rec.message);
}

#[test]
fn short_training_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = heatsink()
        .args(["train-case", "--trials", "2", "--epochs", "20", "--reduce", "50", "--deterministic", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "manifest.json",
        "report.json",
        "summary.csv",
        "log_trial0.csv",
        "log_trial1.csv",
        "field_trial0.csv",
        "checkpoint_trial1.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.trials, 2);
    assert_eq!(m.epochs, Some(20));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["case_id"], "A13_4");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn fd_check_reports_balanced_energy() {
    let dir = tempfile::tempdir().unwrap();
    let status = heatsink()
        .args(["fd-check", "--nx", "128", "--ny", "64", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fd_check.json")).unwrap()).unwrap();
    assert!(v["energy_imbalance"].as_f64().unwrap().abs() < 0.01);
    assert!(v["probes_c"]["In1"].as_f64().unwrap() > 10.0);
}

#[test]
fn unknown_study_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let status = heatsink()
        .args(["validate", "--study", "nope", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(dir.path().join("error.json").exists());
}
