mod common;

use std::fs;

use common::{default_config, run, write_toy_mnist, TOY_OVERRIDES};
use kalman_drift::trainer::records_per_task;
use kalman_drift_cli::output::METRICS_HEADER;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_default_config_echoes_defaults() {
    let cfg = default_config();
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("layers = 784,256,10"), "{out}");
    assert!(out.contains("lr = 0.1"), "{out}");
}

#[test]
fn check_rejects_negative_lr() {
    let cfg = default_config();
    let o = run(&["check", "--config", cfg.to_str().unwrap(), "--set", "lr=-0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("lr") && err.contains("positive"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn check_rejects_unknown_transform() {
    let cfg = default_config();
    let o = run(&["check", "--config", cfg.to_str().unwrap(), "--set", "tasks=identity,rotate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tasks"), "{}", stderr(&o));
}

#[test]
fn missing_labels_file_is_a_data_error() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    fs::remove_file(data.path().join("train-labels-idx1-ubyte")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ];
    args.extend_from_slice(TOY_OVERRIDES);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("train-labels"), "{}", stderr(&o));
}

#[test]
fn width_mismatch_is_a_config_error() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let out = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--set",
        "val_size=20",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

fn toy_run(out: &std::path::Path, data: &std::path::Path, threads: &str) -> std::process::Output {
    let cfg = default_config();
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ];
    args.extend_from_slice(TOY_OVERRIDES);
    common::bin().env("KALMAN_DRIFT_THREADS", threads).args(&args).output().unwrap()
}

#[test]
fn toy_run_writes_expected_artifacts() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let out = tempfile::tempdir().unwrap();
    let o = toy_run(out.path(), data.path(), "2");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let metrics = fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    // 100 train samples after the 20-image validation split: 13 batches of 8
    // per epoch, 2 epochs, a record every 4 batches plus the last
    let per_task = records_per_task(100, 8, 2, 4);
    assert_eq!(per_task, 7);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), per_task + 2 * 2 * per_task);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        for f in fields.iter().skip(3) {
            assert!(f.parse::<f64>().unwrap().is_finite());
        }
    }

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 7);
    assert!(summary["learners"]["kalman"]["pretrain_test_drop"].is_number());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dataset_digests"].as_object().unwrap().len(), 4);
    for name in [
        "pretrained.params",
        "kalman_initial.kstate",
        "conventional_final.params",
        "kalman_final.kstate",
    ] {
        assert!(out.path().join("checkpoints").join(name).is_file(), "{name}");
    }
}

#[test]
fn toy_runs_are_byte_identical() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(toy_run(a.path(), data.path(), "2").status.success());
    assert!(toy_run(b.path(), data.path(), "1").status.success());
    for file in ["metrics.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    for name in ["gradient-check", "kalman-scalar-oracle", "permutation-bijection", "gain-bounds-fuzz"] {
        assert!(out.contains(&format!("[PASS] {name}")), "{out}");
    }
}
