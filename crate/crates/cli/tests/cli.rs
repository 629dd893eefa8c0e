use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn maca() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maca"))
}

fn bandit_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bandit.json")
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = maca().args(["verify", "--out"]).arg(dir.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS")));
    assert!(!stdout.lines().any(|l| l.starts_with("FAIL")));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn experiment_twice_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let status = maca()
            .arg("experiment")
            .arg("--config")
            .arg(bandit_config())
            .arg("--out")
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["runs.csv", "summary.csv", "metrics/Full_seed0.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let report = maca().arg("report").arg("--out").arg(a.path()).output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("Full"));
}

#[test]
fn train_runs_a_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let status = maca()
        .arg("train")
        .arg("--config")
        .arg(bandit_config())
        .arg("--out")
        .arg(dir.path())
        .args(["--seed", "3"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("metrics/Full_seed3.jsonl").exists());
}

#[test]
fn missing_config_is_an_error() {
    let status = maca()
        .args(["train", "--config", "/nonexistent.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
