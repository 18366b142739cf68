use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn chemofv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemofv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHEMOFV_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "grid": {"dim": 1, "n": [32], "l": [1.0]},
  "model": {"m": 2.0, "eps": 0.0},
  "initial": {
    "u": {"profile": "gaussian", "center": [0.4], "width": 0.12, "amplitude": 1.0, "background": 0.1},
    "v": {"profile": "constant", "value": 1.0}
  },
  "horizon": 0.01,
  "dt_out": 0.005
}"#;

#[test]
fn check_prints_the_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = chemofv(&["check", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["model"]["eps"], 0.0);
    assert_eq!(v["tolerances"]["cfl_safety"], 0.9);
    assert_eq!(v["motility"]["name"], "constant");
    assert_eq!(v["seed"], 0);
}

#[test]
fn invalid_config_exits_with_validation_code_and_lists_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("\"m\": 2.0", "\"m\": 0.5").replace("\"horizon\": 0.01", "\"horizon\": -1.0");
    let cfg = write(dir.path(), "bad.json", &bad);
    let out = chemofv(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.m"), "{err}");
    assert!(err.contains("horizon"), "{err}");
    assert!(!dir.path().join("runs").exists());

    let garbage = write(dir.path(), "garbage.json", "{ not json");
    assert_eq!(chemofv(&["check", garbage.to_str().unwrap()], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(chemofv(&["check", missing.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

#[test]
fn run_writes_the_manifest_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = chemofv(&["run", cfg.to_str().unwrap(), "--workers", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("runs/small");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "success");
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.len() >= 5);
    for a in artifacts {
        assert!(run_dir.join(a.as_str().unwrap()).is_file());
    }
}

#[test]
fn explicit_out_and_zero_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let target = dir.path().join("elsewhere");
    let out = chemofv(&["run", cfg.to_str().unwrap(), "--out", target.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(target.join("monitor.csv").is_file());
    let out = chemofv(&["run", cfg.to_str().unwrap(), "--workers", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_runs_every_member() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let list = write(dir.path(), "ms.json", r#"[{"model": {"m": 1.5}}, {"model": {"m": 3.0}}]"#);
    let out = chemofv(&["sweep", cfg.to_str().unwrap(), list.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/small_sweep/summary.json")).unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["status"] == "success"));
    assert!(dir.path().join("runs/small_sweep/member_001/monitor.csv").is_file());

    let shipped = configs();
    let not_a_list = write(dir.path(), "obj.json", "{}");
    let out = chemofv(
        &["sweep", shipped.join("bump_1d.json").to_str().unwrap(), not_a_list.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forced_undershoot_exits_with_nonconvergence() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
      "grid": {"dim": 1, "n": [32], "l": [1.0]},
      "model": {"m": 2.0, "eps": 0.5},
      "motility": {"name": "exp_decay", "params": [4.0]},
      "initial": {
        "u": {"profile": "constant", "value": 0.0},
        "v": {"profile": "gaussian", "center": [0.75], "width": 0.03, "amplitude": 1.0, "background": 1.0}
      },
      "horizon": 0.1,
      "tolerances": {"dt_max": 0.001, "dt_min": 0.001, "tol_neg": 0.0}
    }"#;
    let cfg = write(dir.path(), "stiff.json", text);
    let out = chemofv(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("runs/stiff/manifest.json").is_file());
}

#[test]
fn studies_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"horizon\": 0.01", "\"horizon\": 0.004").replace("\"dt_out\": 0.005", "\"dt_out\": 0.001");
    let cfg = write(dir.path(), "tiny.json", &text);
    let out = chemofv(&["eps-study", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/tiny_eps/eps_study.json").is_file());
    let out = chemofv(&["converge", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["spatial"]["rows"].as_array().unwrap().len() >= 3);
}
