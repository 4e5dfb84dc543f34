//! Run artifacts: `metrics.csv`, `summary.json`, `manifest.json` and
//! checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kalman_drift::trainer::{ExperimentReport, Learner, MetricRecord};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const METRICS_HEADER: &str =
    "global_step,task_index,learner,acc_pretrain_val,acc_pretrain_test,acc_current_val,loss";

/// Decimal rendering with 9 significant digits and trailing zeros removed.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.8e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let point = exp + 1;
    let mut out = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{digits}{}", "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    if out.contains('.') {
        out.truncate(out.trim_end_matches('0').trim_end_matches('.').len());
    }
    if v < 0.0 {
        out.insert(0, '-');
    }
    out
}

/// `v` rounded to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    sig9(v).parse().unwrap_or(v)
}

pub fn metrics_row(r: &MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.global_step,
        r.task_index,
        r.learner,
        sig9(r.acc_pretrain_val),
        sig9(r.acc_pretrain_test),
        sig9(r.acc_current_val),
        sig9(r.loss)
    )
}

/// Pre-training rows first, then each learner's series in step order.
pub fn write_metrics_csv(path: &Path, report: &ExperimentReport) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for learner in [Learner::Pretrain, Learner::Conventional, Learner::Kalman] {
        for r in report.series.get(&learner).into_iter().flatten() {
            writeln!(w, "{}", metrics_row(r))?;
        }
    }
    w.flush()
}

fn config_json(config: &RunConfig) -> Value {
    let t = &config.trainer;
    json!({
        "layers": t.architecture.layer_sizes(),
        "lr": t.lr,
        "batch_size": t.batch_size,
        "epochs_per_task": t.epochs_per_task,
        "noise_floor": t.noise_floor,
        "covariance_floor": t.covariance_floor(),
        "noise_transform": t.noise_transform.name(),
        "eval_every": t.eval_every,
        "seed": t.seed,
        "tasks": config.sequence.kinds,
        "permute_seed": config.sequence.permute_seed,
        "shift_offset": config.sequence.shift_offset,
        "val_size": config.val_size,
    })
}

/// Choices the harness makes that the experiment description leaves open.
pub const FILLED_CHOICES: &[&str] = &[
    "architecture: fully connected, ReLU hidden layers, linear output",
    "loss: mean softmax cross-entropy per batch",
    "initialization: uniform +-1/sqrt(fan_in) weights, zero biases",
    "optimizer hyperparameters: lr, batch size and epochs per task as configured",
    "filter noise: squared (or absolute) gradients floored at noise_floor",
    "filter cadence: one SGD step and one filter update per mini-batch",
    "carried model: the fused estimate seeds the next SGD step and is evaluated",
    "label shift wraps modulo 10 (9 -> 0)",
    "one pixel permutation shared by train, validation and test",
    "validation: last val_size images of the training file",
    "every task reuses the full training split",
];

pub fn summary_json(config: &RunConfig, report: &ExperimentReport) -> Value {
    let learners: serde_json::Map<String, Value> = report
        .summary
        .iter()
        .map(|s| {
            let finals: Vec<Value> = s
                .task_finals
                .iter()
                .map(|f| {
                    json!({
                        "task_index": f.task_index,
                        "name": f.name,
                        "acc_pretrain_val": round9(f.acc_pretrain_val),
                        "acc_pretrain_test": round9(f.acc_pretrain_test),
                        "acc_current_val": round9(f.acc_current_val),
                    })
                })
                .collect();
            (
                s.learner.to_string(),
                json!({
                    "pretrain_test_drop": round9(s.pretrain_test_drop),
                    "pretrain_val_drop": round9(s.pretrain_val_drop),
                    "task_finals": finals,
                }),
            )
        })
        .collect();
    let tasks: Vec<Value> = report
        .tasks
        .tasks()
        .iter()
        .map(|t| json!({"name": t.name, "transform": t.transform.to_string(), "epochs": t.epochs}))
        .collect();
    let pretrain_final = report.series.get(&Learner::Pretrain).and_then(|s| s.last());
    json!({
        "config": config_json(config),
        "tasks": tasks,
        "pretrain": {
            "steps": report.pretrain_steps,
            "acc_val": pretrain_final.map(|r| round9(r.acc_pretrain_val)),
            "acc_test": pretrain_final.map(|r| round9(r.acc_pretrain_test)),
            "initial_covariance_median": round9(report.initial_covariance_median),
        },
        "learners": learners,
        "filled_choices": FILLED_CHOICES,
    })
}

pub fn write_json(path: &Path, value: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub struct Manifest<'a> {
    pub config: &'a RunConfig,
    pub dataset_files: &'a [PathBuf],
    pub started_at: String,
    pub finished_at: String,
    pub outputs: &'a [PathBuf],
}

impl Manifest<'_> {
    pub fn to_json(&self) -> std::io::Result<Value> {
        let digests = self
            .dataset_files
            .iter()
            .map(|p| Ok((p.display().to_string(), Value::from(file_sha256(p)?))))
            .collect::<std::io::Result<serde_json::Map<_, _>>>()?;
        Ok(json!({
            "config_hash": sha256_hex(self.config.resolved().as_bytes()),
            "dataset_digests": digests,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "code_version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formats() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(0.953), "0.953");
        assert_eq!(sig9(8.154845485377136), "8.15484549");
        assert_eq!(sig9(-0.000123456789123), "-0.000123456789");
        assert_eq!(sig9(1234567890123.0), "1234567890000");
        assert_eq!(sig9(9.9999999996), "10");
        assert_eq!(sig9(1e-12), "0.000000000001");
        assert_eq!(sig9(12.5), "12.5");
    }

    #[test]
    fn round9_is_idempotent() {
        for v in [0.1 + 0.2, 1.0 / 3.0, 7.123456789012, 1e-12] {
            assert_eq!(round9(round9(v)), round9(v));
        }
        assert_eq!(round9(0.1 + 0.2), 0.3);
    }
}
