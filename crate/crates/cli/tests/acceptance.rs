//! End-to-end acceptance suite. Two full default runs on MNIST plus the
//! fast property checks; one pass/fail line per criterion.
//!
//! MNIST is read from `KALMAN_DRIFT_DATA` or `data/mnist` at the workspace
//! root. Expect roughly 15 minutes on a single core.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use kalman_drift::data::{shift_labels, Dataset};
use kalman_drift::nn::loss_and_grad;
use kalman_drift::selftest::{gain_limit, gradient_check_with, permutation_bijection, scalar_oracle, GainLimit};
use kalman_drift::trainer::Learner;
use kalman_drift_cli::commands::{self, LearnerChoice, RunArgs, RunOutputs};
use ndarray::Array2;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("KALMAN_DRIFT_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn full_run(out: &std::path::Path) -> Result<RunOutputs, String> {
    let args = RunArgs {
        config: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf"),
        data: data_dir(),
        out: out.to_path_buf(),
        seed: None,
        learner: LearnerChoice::Both,
        overrides: Vec::new(),
    };
    commands::run(&args).map_err(|e| e.to_string())
}

fn retention(run: &RunOutputs) -> Verdict {
    let drop = |l: Learner| run.report.summary.iter().find(|s| s.learner == l).map(|s| s.pretrain_test_drop);
    match (drop(Learner::Conventional), drop(Learner::Kalman)) {
        (Some(c), Some(k)) => verdict(
            c >= 0.50 && k <= 0.05,
            format!("conventional drop {:.2} pts (need >= 50), kalman drop {:.2} pts (need <= 5)", c * 100.0, k * 100.0),
        ),
        _ => verdict(false, "missing learner summary"),
    }
}

fn pretraining(run: &RunOutputs) -> Verdict {
    match run.report.series.get(&Learner::Pretrain).and_then(|s| s.last()) {
        Some(r) => verdict(
            r.acc_pretrain_test >= 0.95,
            format!("task-0 test accuracy {:.4} (need >= 0.95)", r.acc_pretrain_test),
        ),
        None => verdict(false, "no pre-training records"),
    }
}

fn property(r: kalman_drift::Result<kalman_drift::selftest::PropertyResult>) -> Verdict {
    match r {
        Ok(r) => verdict(r.passed, r.detail),
        Err(e) => verdict(false, format!("error: {e}")),
    }
}

fn limits() -> Verdict {
    let one = property(gain_limit(GainLimit::One, 100, 21));
    let zero = property(gain_limit(GainLimit::Zero, 100, 22));
    verdict(
        one.passed && zero.passed,
        format!("K~1 vs SGD: {}; K~0 vs start: {}", one.detail, zero.detail),
    )
}

fn drift_transforms() -> Verdict {
    let perm = property(permutation_bijection(32));
    let labels: Vec<u8> = (0..10).collect();
    let ds = Dataset::new(Array2::zeros((10, 1)), labels.clone()).unwrap();
    let shifted = shift_labels(&ds, 1).unwrap();
    let three_to_four = shifted.labels()[3] == 4;
    let nine_to_zero = shifted.labels()[9] == 0;
    let inverses = (1..10u8).all(|k| {
        let there = shift_labels(&ds, k).unwrap();
        shift_labels(&there, 10 - k).unwrap().labels() == labels.as_slice()
    });
    verdict(
        perm.passed && three_to_four && nine_to_zero && inverses,
        format!("{}; 3->4 {three_to_four}, 9->0 {nine_to_zero}, k then 10-k identity {inverses}", perm.detail),
    )
}

#[test]
fn acceptance() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run_a = full_run(dir_a.path());
    let run_b = full_run(dir_b.path());

    let mut verdicts: Vec<(&str, Verdict)> = Vec::new();
    match &run_a {
        Ok(run) => {
            verdicts.push(("retention", retention(run)));
            verdicts.push(("pretraining", pretraining(run)));
        }
        Err(e) => {
            verdicts.push(("retention", verdict(false, e.clone())));
            verdicts.push(("pretraining", verdict(false, e.clone())));
        }
    }
    verdicts.push((
        "gradient oracle",
        property(gradient_check_with(|p, b| loss_and_grad(p, b).map(|(_, g)| g), 25, 31)),
    ));
    verdicts.push(("kalman scalar oracle", property(scalar_oracle(1000, 32))));
    verdicts.push(("limit equivalences", limits()));
    verdicts.push(("drift transforms", drift_transforms()));
    verdicts.push((
        "determinism",
        match (&run_a, &run_b) {
            (Ok(a), Ok(b)) => {
                let same = fs::read(&a.metrics).unwrap() == fs::read(&b.metrics).unwrap();
                verdict(same, format!("metrics.csv byte-identical across two runs: {same}"))
            }
            _ => verdict(false, "a full run failed"),
        },
    ));
    verdicts.push((
        "no replay",
        match &run_a {
            Ok(run) => verdict(
                run.replay_violations.is_empty() && !run.access_log.is_empty(),
                format!(
                    "{} reads logged, {} after their task closed",
                    run.access_log.len(),
                    run.replay_violations.len()
                ),
            ),
            Err(e) => verdict(false, e.clone()),
        },
    ));

    // written to the stdout handle directly so the lines survive test capture
    let mut stdout = std::io::stdout().lock();
    for (i, (name, v)) in verdicts.iter().enumerate() {
        let status = if v.passed { "PASS" } else { "FAIL" };
        writeln!(stdout, "[{status}] criterion {} ({name}): {}", i + 1, v.detail).unwrap();
    }
    drop(stdout);
    let failed: Vec<usize> = verdicts.iter().enumerate().filter(|(_, (_, v))| !v.passed).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
