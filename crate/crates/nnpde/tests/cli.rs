//! Behavior of the command-line front end: exit codes and artifact layout.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nnpde")
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nnpde-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tmp("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"unknown_key": true}"#).unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg2 = dir.join("bad_beta.json");
    std::fs::write(&cfg2, r#"{"beta": 0.4}"#).unwrap();
    let out = Command::new(bin())
        .args(["train", "--config"])
        .arg(&cfg2)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_grid_flag_exits_with_code_2() {
    let out = Command::new(bin())
        .args(["train", "--grid", "9,9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_expected_artifacts() {
    let dir = tmp("artifacts");
    let out = Command::new(bin())
        .args(["train", "--n", "4", "--epochs", "5", "--grid", "5,7,7", "--seed", "3", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["log.csv", "best_params.json", "summary.json", "rmse.svg", "best_rmse.svg"] {
        assert!(dir.join(f).exists(), "missing artifact {f}");
    }
    let log = std::fs::read_to_string(dir.join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,j,rmse_rel,grad_norm,rate,clipped,best_rmse\n"));
    assert_eq!(log.lines().count(), 1 + 6);
}

#[test]
fn validate_reports_pass_for_reference_setup() {
    let out = Command::new(bin())
        .args(["validate", "--grid", "7,7,7"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS] parabolic"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn gradcheck_prints_table_and_passes() {
    let out = Command::new(bin()).arg("gradcheck").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gradient check passed"));
}

#[test]
fn exhausted_kernel_budget_exits_with_code_4() {
    let dir = tmp("budget");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("budget.json");
    std::fs::write(
        &cfg,
        r#"{"kernel_budget": 64, "grid": {"t_count": 5, "x_count": 5, "y_count": 5}, "limit": {"mc_samples": 10}}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["kernel-spectrum", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_table() {
    let dir = tmp("sweep");
    let out = Command::new(bin())
        .args([
            "sweep", "--n-list", "2,4", "--epochs", "4", "--grid", "5,7,7", "--seed", "11", "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(table.starts_with("n,mean_best_rmse,stderr,seeds"));
    assert_eq!(table.lines().count(), 3);
    assert!(dir.join("sweep.svg").exists());
}
