use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::Utc;
use kalman_drift::checkpoint::{write_kalman, write_params};
use kalman_drift::data::{load_mnist, MnistFiles, MnistSplits};
use kalman_drift::selftest::{self, PropertyResult};
use kalman_drift::trainer::{
    run_experiment, AccessEvent, ExperimentData, ExperimentReport, Learner, LearnerSet, NullSink, RunOptions,
};

use crate::config::{ConfigError, RunConfig};
use crate::output::{summary_json, write_json, write_metrics_csv, Manifest};

pub const THREADS_ENV: &str = "KALMAN_DRIFT_THREADS";

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<kalman_drift::Error> for CliError {
    fn from(e: kalman_drift::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else if matches!(e, kalman_drift::Error::InvalidConfig(_)) {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum LearnerChoice {
    Conventional,
    Kalman,
    #[default]
    Both,
}

impl LearnerChoice {
    pub fn set(self) -> LearnerSet {
        LearnerSet {
            conventional: self != LearnerChoice::Kalman,
            kalman: self != LearnerChoice::Conventional,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub learner: LearnerChoice,
    /// Extra `key=value` overrides, applied before `seed`.
    pub overrides: Vec<String>,
}

/// Everything a completed run produced.
pub struct RunOutputs {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub report: ExperimentReport,
    pub access_log: Vec<AccessEvent>,
    pub replay_violations: Vec<AccessEvent>,
}

/// Reads `KALMAN_DRIFT_THREADS`; defaults to one thread per lineage.
pub fn thread_cap(lineages: usize) -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(lineages.max(1)),
    }
}

pub fn resolve_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::load(path)?;
    for o in overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = seed {
        config.trainer.seed = seed;
    }
    Ok(config)
}

fn load_splits(data_dir: &Path, val_size: usize) -> Result<(MnistSplits, Vec<PathBuf>), CliError> {
    let data_err = |e: kalman_drift::Error| CliError::Data(e.to_string());
    let files = MnistFiles::locate(data_dir).map_err(|e| CliError::Data(e.to_string()))?;
    let train = load_mnist(&files.train_images, &files.train_labels).map_err(data_err)?;
    let test = load_mnist(&files.test_images, &files.test_labels).map_err(data_err)?;
    let paths = files.all().iter().map(|p| p.to_path_buf()).collect();
    let splits = MnistSplits::from_parts(train, test, val_size).map_err(|e| CliError::Config(format!("val_size: {e}")))?;
    Ok((splits, paths))
}

fn save<F>(path: &Path, write: F) -> Result<(), CliError>
where
    F: FnOnce(BufWriter<File>) -> kalman_drift::Result<()>,
{
    let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    write(BufWriter::new(file)).map_err(runtime)
}

/// Runs the experiment and writes every artifact into `args.out`.
pub fn run(args: &RunArgs) -> Result<RunOutputs, CliError> {
    let started_at = Utc::now().to_rfc3339();
    let config = resolve_config(&args.config, &args.overrides, args.seed)?;
    let sequence = config.validate()?;
    let learners = args.learner.set();
    let threads = thread_cap(learners.learners().len())?;

    let (splits, dataset_files) = load_splits(&args.data, config.val_size)?;
    if splits.test.input_dim() != config.trainer.architecture.input_dim() {
        return Err(CliError::Config(format!(
            "layers: input width {} does not match image width {}",
            config.trainer.architecture.input_dim(),
            splits.test.input_dim()
        )));
    }
    let data = ExperimentData::new(&splits, &sequence)?;
    drop(splits);

    let report = run_experiment(&config.trainer, &sequence, &data, RunOptions { learners, threads }, &NullSink)?;

    let out = &args.out;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| runtime(format!("{}: {e}", ckpt_dir.display())))?;

    let metrics = out.join("metrics.csv");
    write_metrics_csv(&metrics, &report).map_err(runtime)?;
    let summary = out.join("summary.json");
    write_json(&summary, &summary_json(&config, &report)).map_err(runtime)?;

    let mut checkpoints = Vec::new();
    let floor = config.trainer.covariance_floor();
    if let Some(pre) = &report.pretrained {
        let p = ckpt_dir.join("pretrained.params");
        save(&p, |w| write_params(w, &pre.params))?;
        checkpoints.push(p);
        let p = ckpt_dir.join("kalman_initial.kstate");
        save(&p, |w| write_kalman(w, &pre.kalman, floor))?;
        checkpoints.push(p);
    }
    if let Some(params) = report.final_params.get(&Learner::Conventional) {
        let p = ckpt_dir.join("conventional_final.params");
        save(&p, |w| write_params(w, params))?;
        checkpoints.push(p);
    }
    if let Some(state) = &report.final_kalman {
        let p = ckpt_dir.join("kalman_final.kstate");
        save(&p, |w| write_kalman(w, state, floor))?;
        checkpoints.push(p);
    }

    let manifest = out.join("manifest.json");
    let mut outputs = vec![metrics.clone(), summary.clone()];
    outputs.extend(checkpoints.iter().cloned());
    let manifest_json = Manifest {
        config: &config,
        dataset_files: &dataset_files,
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        outputs: &outputs,
    }
    .to_json()
    .map_err(runtime)?;
    write_json(&manifest, &manifest_json).map_err(runtime)?;

    Ok(RunOutputs {
        metrics,
        summary,
        manifest,
        checkpoints,
        report,
        access_log: data.access_log(),
        replay_violations: data.replay_violations(),
    })
}

/// Validates the configuration without touching data and returns the
/// resolved settings.
pub fn check(config_path: &Path, overrides: &[String]) -> Result<String, CliError> {
    let config = resolve_config(config_path, overrides, None)?;
    config.validate()?;
    Ok(config.resolved())
}

pub fn selftest() -> Vec<PropertyResult> {
    selftest::run_all()
}
