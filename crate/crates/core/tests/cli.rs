use std::path::Path;
use std::process::{Command, Output};

fn minnorm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minnorm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn minnorm")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = minnorm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn teacher_data_fit_and_norms_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-teacher", "--d", "3", "--atoms", "16", "--seed", "4", "--out", "."]);
    ok(p, &["gen-data", "--teacher", "teacher.json", "--n", "12", "--seed", "5", "--out", "."]);
    let data: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("data.json")).unwrap()).unwrap();
    assert!(data.is_object());

    let report: serde_json::Value =
        serde_json::from_str(&ok(p, &["fit", "rf", "--data", "data.json", "--m", "400", "--out", "."])).unwrap();
    assert!(report["interp_error"].as_f64().unwrap() <= 1e-8);
    assert!(p.join("rf-model.json").exists());

    let report: serde_json::Value = serde_json::from_str(&ok(
        p,
        &[
            "fit", "two-layer", "--data", "data.json", "--teacher", "teacher.json", "--m1", "64", "--m2", "2048",
            "--quadrature", "50000", "--out", ".",
        ],
    ))
    .unwrap();
    assert!(report["interp_error"].as_f64().unwrap() <= 1e-8);
    assert!(p.join("two-layer.json").exists());
}

#[test]
fn resnet_fit_and_norm_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-teacher", "--kind", "resnet", "--d", "2", "--depth", "3", "--seed", "8", "--out", "."]);
    ok(p, &["gen-data", "--teacher", "teacher.json", "--n", "8", "--seed", "9", "--out", "."]);
    ok(
        p,
        &[
            "fit", "resnet", "--data", "data.json", "--teacher", "teacher.json", "--keep", "2", "--m2", "1024",
            "--quadrature", "50000", "--out", ".",
        ],
    );
    let table = ok(p, &["norms", "resnet.json"]);
    let mut lines = table.lines();
    assert!(lines.next().unwrap().contains("weighted_path_norm"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn verify_writes_csv_and_summary_with_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["verify", "--lemma", "embedding", "--trials", "4", "--seed", "3", "--out", "res"]);
    let csv = std::fs::read_to_string(p.join("res/verify-embedding.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# minnorm "));
    assert!(lines.next().unwrap().starts_with("# config {"));
    assert!(lines.next().unwrap().starts_with("trial,"));
    assert_eq!(lines.count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("res/verify-embedding.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass_fraction"].as_f64(), Some(1.0));
    assert_eq!(summary["config"]["master_seed"].as_u64(), Some(3));
    assert_eq!(summary["config"]["trials"].as_u64(), Some(4));
}

#[test]
fn config_file_overrides_preset_and_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("cfg.json"), r#"{"trials": 7, "m_grid": [2, 5]}"#).unwrap();
    ok(p, &["verify", "--lemma", "embedding", "--config", "cfg.json", "--trials", "3", "--out", "."]);
    let csv = std::fs::read_to_string(p.join("verify-embedding.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3 + 2 * 3);
}

#[test]
fn bad_inputs_exit_with_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(!minnorm(p, &["verify", "--lemma", "no-such-lemma"]).status.success());
    assert!(!minnorm(p, &["norms", "missing.json"]).status.success());
    std::fs::write(p.join("cfg.json"), r#"{"unknown_key": 1}"#).unwrap();
    let out = minnorm(p, &["verify", "--lemma", "embedding", "--config", "cfg.json"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    std::fs::write(p.join("cfg.json"), r#"{"delta": 1.5}"#).unwrap();
    assert!(!minnorm(p, &["verify", "--lemma", "kernel-approx", "--config", "cfg.json"]).status.success());
}
