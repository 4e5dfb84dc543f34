//! Sequential-task protocol: pre-train on task 0, then carry the pre-trained
//! model through the remaining tasks with a conventional SGD learner and a
//! Kalman-modified learner, recording accuracy on the pre-training
//! validation and test sets as training proceeds.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::Serialize;

use crate::data::{apply_transform, batches, Batch, Dataset, MnistSplits, TaskSequence, TaskSpec};
use crate::kalman::{
    init_kalman, kalman_predict, kalman_update, measurement_noise, KalmanState, NoiseTransform, NoiseVector,
    DEFAULT_FLOOR,
};
use crate::nn::{evaluate, init_params, loss_and_grad, sgd_step, Architecture, ParamVector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainerConfig {
    pub architecture: Architecture,
    /// SGD step size (the control gain of the state model).
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    /// Floor applied to the measurement noise `R`.
    pub noise_floor: f64,
    /// Floor applied to the covariance `P`; `None` uses `noise_floor`.
    pub covariance_floor: Option<f64>,
    pub noise_transform: NoiseTransform,
    /// Batches between metric records.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            architecture: Architecture::mnist_default(),
            lr: 0.1,
            batch_size: 64,
            epochs_per_task: 5,
            noise_floor: DEFAULT_FLOOR,
            covariance_floor: None,
            noise_transform: NoiseTransform::Square,
            eval_every: 50,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Checks every field, naming the first one that is invalid.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.epochs_per_task == 0 {
            return bad("epochs_per_task", "must be at least 1".into());
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return bad("noise_floor", format!("must be positive, got {}", self.noise_floor));
        }
        if let Some(f) = self.covariance_floor {
            if !(f > 0.0 && f.is_finite()) {
                return bad("covariance_floor", format!("must be positive, got {f}"));
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn covariance_floor(&self) -> f64 {
        self.covariance_floor.unwrap_or(self.noise_floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    /// Task-0 training, shared by both lineages.
    Pretrain,
    Conventional,
    Kalman,
}

impl Learner {
    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Pretrain => "pretrain",
            Learner::Conventional => "conventional",
            Learner::Kalman => "kalman",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub global_step: u64,
    pub task_index: usize,
    pub learner: Learner,
    pub acc_pretrain_val: f64,
    pub acc_pretrain_test: f64,
    pub acc_current_val: f64,
    /// Training loss of the batch that ended at `global_step`.
    pub loss: f64,
}

/// Append-only destination for metric records. Records from one lineage
/// arrive in order; lineages may interleave.
pub trait MetricSink: Sync {
    fn record(&self, record: MetricRecord);
}

/// Discards everything.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&self, _: MetricRecord) {}
}

/// Keeps records grouped per learner.
#[derive(Default)]
pub struct MemorySink {
    series: Mutex<BTreeMap<Learner, Vec<MetricRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn series(&self, learner: Learner) -> Vec<MetricRecord> {
        self.series.lock().unwrap().get(&learner).cloned().unwrap_or_default()
    }

    pub fn into_series(self) -> BTreeMap<Learner, Vec<MetricRecord>> {
        self.series.into_inner().unwrap()
    }
}

impl MetricSink for MemorySink {
    fn record(&self, record: MetricRecord) {
        self.series.lock().unwrap().entry(record.learner).or_default().push(record);
    }
}

struct Tee<'a> {
    keep: MemorySink,
    forward: &'a dyn MetricSink,
}

impl MetricSink for Tee<'_> {
    fn record(&self, record: MetricRecord) {
        self.forward.record(record.clone());
        self.keep.record(record);
    }
}

/// Which split of a task's data was read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AccessEvent {
    pub task_index: usize,
    pub split: Split,
    /// True when the read happened after the task was closed.
    pub after_close: bool,
}

#[derive(Clone)]
struct TaskData {
    train: Dataset,
    validation: Dataset,
}

/// Per-task data behind an access log. A task's arrays are dropped when the
/// task is closed, and any later read is logged as a violation and refused.
///
/// The pre-training validation and test sets are evaluation probes used for
/// the whole run and are not part of any task's data.
pub struct ExperimentData {
    pretrain_val: Dataset,
    pretrain_test: Dataset,
    tasks: Mutex<Vec<Option<TaskData>>>,
    log: Mutex<Vec<AccessEvent>>,
}

impl ExperimentData {
    /// Builds every task's train and validation split by applying its
    /// transform to the base splits.
    pub fn new(splits: &MnistSplits, sequence: &TaskSequence) -> Result<Self> {
        let tasks = sequence
            .tasks()
            .iter()
            .map(|t| {
                Ok(Some(TaskData {
                    train: apply_transform(&splits.train, &t.transform)?,
                    validation: apply_transform(&splits.validation, &t.transform)?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentData {
            pretrain_val: splits.validation.clone(),
            pretrain_test: splits.test.clone(),
            tasks: Mutex::new(tasks),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.pretrain_test.input_dim()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.lock().unwrap().len()
    }

    fn read(&self, task_index: usize, split: Split) -> Result<Dataset> {
        let tasks = self.tasks.lock().unwrap();
        let slot = tasks
            .get(task_index)
            .ok_or_else(|| Error::InvalidTaskSequence(format!("no task {task_index}")))?;
        self.log.lock().unwrap().push(AccessEvent {
            task_index,
            split,
            after_close: slot.is_none(),
        });
        let data = slot.as_ref().ok_or(Error::TaskClosed(task_index))?;
        Ok(match split {
            Split::Train => data.train.clone(),
            Split::Validation => data.validation.clone(),
        })
    }

    pub fn train(&self, task_index: usize) -> Result<Dataset> {
        self.read(task_index, Split::Train)
    }

    pub fn validation(&self, task_index: usize) -> Result<Dataset> {
        self.read(task_index, Split::Validation)
    }

    pub fn pretrain_val(&self) -> &Dataset {
        &self.pretrain_val
    }

    pub fn pretrain_test(&self) -> &Dataset {
        &self.pretrain_test
    }

    /// Drops the task's arrays; later reads fail.
    pub fn close_task(&self, task_index: usize) {
        if let Some(slot) = self.tasks.lock().unwrap().get_mut(task_index) {
            *slot = None;
        }
    }

    pub fn is_closed(&self, task_index: usize) -> bool {
        matches!(self.tasks.lock().unwrap().get(task_index), Some(None))
    }

    pub fn access_log(&self) -> Vec<AccessEvent> {
        self.log.lock().unwrap().clone()
    }

    pub fn replay_violations(&self) -> Vec<AccessEvent> {
        self.access_log().into_iter().filter(|e| e.after_close).collect()
    }
}

/// Seed for the batch order of one epoch of one task (splitmix64 finalizer).
pub fn epoch_seed(seed: u64, task_index: usize, epoch: usize) -> u64 {
    let mut z = seed
        .wrapping_add((task_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of batches a task runs for.
pub fn batches_per_task(n: usize, batch_size: usize, epochs: usize) -> usize {
    n.div_ceil(batch_size) * epochs
}

/// Number of metric records a task emits: one every `eval_every` batches
/// plus one at the final batch when it is off-schedule.
pub fn records_per_task(n: usize, batch_size: usize, epochs: usize, eval_every: usize) -> usize {
    batches_per_task(n, batch_size, epochs).div_ceil(eval_every)
}

/// Where a learner is within the run.
pub struct TaskContext<'a> {
    pub task_index: usize,
    pub task: &'a TaskSpec,
    pub learner: Learner,
    pub data: &'a ExperimentData,
    pub sink: &'a dyn MetricSink,
}

fn measure(ctx: &TaskContext<'_>, params: &ParamVector, current_val: &Dataset, step: u64, loss: f64) -> Result<MetricRecord> {
    Ok(MetricRecord {
        global_step: step,
        task_index: ctx.task_index,
        learner: ctx.learner,
        acc_pretrain_val: evaluate(params, ctx.data.pretrain_val())?,
        acc_pretrain_test: evaluate(params, ctx.data.pretrain_test())?,
        acc_current_val: evaluate(params, current_val)?,
        loss,
    })
}

/// Runs `update` over every batch of every epoch of the task, emitting
/// records on the evaluation schedule. `step` is the lineage's global step
/// counter.
fn run_batches<F>(
    config: &TrainerConfig,
    ctx: &TaskContext<'_>,
    mut params: ParamVector,
    step: &mut u64,
    mut update: F,
) -> Result<ParamVector>
where
    F: FnMut(&ParamVector, &Batch) -> Result<(f64, ParamVector)>,
{
    config.validate()?;
    if ctx.task.epochs == 0 {
        return Err(Error::InvalidConfig("epochs_per_task: must be at least 1".into()));
    }
    let train = ctx.data.train(ctx.task_index)?;
    let current_val = ctx.data.validation(ctx.task_index)?;
    let total = batches_per_task(train.len(), config.batch_size, ctx.task.epochs);
    let mut done = 0;
    for epoch in 0..ctx.task.epochs {
        let seed = epoch_seed(config.seed, ctx.task_index, epoch);
        for batch in batches(&train, config.batch_size, seed)? {
            let (loss, next) = update(&params, &batch)?;
            params = next;
            done += 1;
            *step += 1;
            if done % config.eval_every == 0 || done == total {
                ctx.sink.record(measure(ctx, &params, &current_val, *step, loss)?);
            }
        }
    }
    Ok(params)
}

/// One SGD step per batch.
pub fn train_task_conventional(
    params: ParamVector,
    config: &TrainerConfig,
    ctx: &TaskContext<'_>,
    step: &mut u64,
) -> Result<ParamVector> {
    run_batches(config, ctx, params, step, |p, batch| conventional_step(p, batch, config.lr))
}

/// One conventional update on a batch; returns the pre-step batch loss.
pub fn conventional_step(params: &ParamVector, batch: &Batch, lr: f64) -> Result<(f64, ParamVector)> {
    let (loss, grad) = loss_and_grad(params, batch)?;
    Ok((loss, sgd_step(params, &grad, lr)?))
}

/// One Kalman-modified update on a batch: `m_k = sgd_step(m̂_{k-1})`,
/// `R = noise(m_k, D_k)`, identity predict, then fuse `m_k` into the state.
/// Returns the pre-step batch loss and the posterior.
pub fn kalman_step<N>(state: KalmanState, batch: &Batch, lr: f64, floor: f64, noise: N) -> Result<(f64, KalmanState)>
where
    N: Fn(&ParamVector, &Batch) -> Result<NoiseVector>,
{
    let (loss, measured) = conventional_step(&state.estimate, batch, lr)?;
    let r = noise(&measured, batch)?;
    let prior = kalman_predict(state);
    Ok((loss, kalman_update(&prior, &measured, &r, floor)?))
}

/// Kalman-modified learner with measurement noise from the configured
/// gradient transform.
pub fn train_task_kalman(
    state: KalmanState,
    config: &TrainerConfig,
    ctx: &TaskContext<'_>,
    step: &mut u64,
) -> Result<KalmanState> {
    let floor = config.noise_floor;
    let transform = config.noise_transform;
    train_task_kalman_with(state, config, ctx, step, |m, b| measurement_noise(m, b, floor, transform))
}

/// Kalman-modified learner with a caller-supplied measurement-noise model.
/// The fused estimate is the model carried to the next batch and evaluated.
pub fn train_task_kalman_with<N>(
    state: KalmanState,
    config: &TrainerConfig,
    ctx: &TaskContext<'_>,
    step: &mut u64,
    noise: N,
) -> Result<KalmanState>
where
    N: Fn(&ParamVector, &Batch) -> Result<NoiseVector>,
{
    let floor = config.covariance_floor();
    let mut state = Some(state);
    let start = state.as_ref().unwrap().estimate.clone();
    run_batches(config, ctx, start, step, |_, batch| {
        let current = state.take().expect("state restored every batch");
        let (loss, posterior) = kalman_step(current, batch, config.lr, floor, &noise)?;
        let carried = posterior.estimate.clone();
        state = Some(posterior);
        Ok((loss, carried))
    })?;
    Ok(state.expect("state restored every batch"))
}

/// Output of pre-training.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ParamVector,
    pub kalman: KalmanState,
    pub steps: u64,
}

/// Trains a fresh network on task 0 by plain SGD, then initializes the
/// filter from the full training-set gradient of the result.
pub fn pretrain(config: &TrainerConfig, task0: &TaskSpec, data: &ExperimentData, sink: &dyn MetricSink) -> Result<Pretrained> {
    config.validate()?;
    if !task0.transform.is_identity() {
        return Err(Error::InvalidTaskSequence("pre-training task must be the identity task".into()));
    }
    if config.architecture.input_dim() != data.input_dim() {
        return Err(Error::InvalidConfig(format!(
            "layers: input width {} does not match data width {}",
            config.architecture.input_dim(),
            data.input_dim()
        )));
    }
    let ctx = TaskContext {
        task_index: 0,
        task: task0,
        learner: Learner::Pretrain,
        data,
        sink,
    };
    let mut steps = 0;
    let init = init_params(&config.architecture, config.seed)?;
    let params = train_task_conventional(init, config, &ctx, &mut steps)?;
    let (_, full_grad) = loss_and_grad(&params, &data.train(0)?.as_batch())?;
    let kalman = init_kalman(&params, &full_grad, config.covariance_floor(), config.noise_transform)?;
    Ok(Pretrained { params, kalman, steps })
}

/// Which learners to run after pre-training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LearnerSet {
    pub conventional: bool,
    pub kalman: bool,
}

impl LearnerSet {
    pub const BOTH: LearnerSet = LearnerSet {
        conventional: true,
        kalman: true,
    };

    pub fn learners(self) -> Vec<Learner> {
        let mut v = Vec::new();
        if self.conventional {
            v.push(Learner::Conventional);
        }
        if self.kalman {
            v.push(Learner::Kalman);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskFinal {
    pub task_index: usize,
    pub name: String,
    pub acc_pretrain_val: f64,
    pub acc_pretrain_test: f64,
    pub acc_current_val: f64,
}

impl TaskFinal {
    fn from_record(task: &TaskSpec, r: &MetricRecord) -> Self {
        TaskFinal {
            task_index: r.task_index,
            name: task.name.clone(),
            acc_pretrain_val: r.acc_pretrain_val,
            acc_pretrain_test: r.acc_pretrain_test,
            acc_current_val: r.acc_current_val,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnerSummary {
    pub learner: Learner,
    /// Accuracy at the end of each task, task 0 included.
    pub task_finals: Vec<TaskFinal>,
    /// Pre-training test accuracy at the end of task 0 minus at the end of
    /// the final task.
    pub pretrain_test_drop: f64,
    pub pretrain_val_drop: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub config: TrainerConfig,
    pub tasks: TaskSequence,
    pub learners: LearnerSet,
    pub pretrain_steps: u64,
    /// Median of the initial covariance `P₀`.
    pub initial_covariance_median: f64,
    pub series: BTreeMap<Learner, Vec<MetricRecord>>,
    pub summary: Vec<LearnerSummary>,
    #[serde(skip)]
    pub final_params: BTreeMap<Learner, ParamVector>,
    #[serde(skip)]
    pub final_kalman: Option<KalmanState>,
    #[serde(skip)]
    pub pretrained: Option<Pretrained>,
}

impl ExperimentReport {
    pub fn summary_for(&self, learner: Learner) -> Option<&LearnerSummary> {
        self.summary.iter().find(|s| s.learner == learner)
    }
}

/// Options that affect scheduling only, never results.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub learners: LearnerSet,
    /// Upper bound on lineages trained concurrently.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            learners: LearnerSet::BOTH,
            threads: 2,
        }
    }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

enum Lineage {
    Conventional(ParamVector),
    Kalman(KalmanState),
}

impl Lineage {
    fn learner(&self) -> Learner {
        match self {
            Lineage::Conventional(_) => Learner::Conventional,
            Lineage::Kalman(_) => Learner::Kalman,
        }
    }

    fn train(self, config: &TrainerConfig, ctx: &TaskContext<'_>, step: &mut u64) -> Result<Lineage> {
        Ok(match self {
            Lineage::Conventional(p) => Lineage::Conventional(train_task_conventional(p, config, ctx, step)?),
            Lineage::Kalman(s) => Lineage::Kalman(train_task_kalman(s, config, ctx, step)?),
        })
    }
}

/// Pre-trains once, then runs each selected learner through tasks `1..`.
///
/// Lineages advance task by task in lockstep and each task's data is closed
/// once every lineage has finished it, so no task is read after it ends.
pub fn run_experiment(
    config: &TrainerConfig,
    sequence: &TaskSequence,
    data: &ExperimentData,
    options: RunOptions,
    sink: &dyn MetricSink,
) -> Result<ExperimentReport> {
    config.validate()?;
    if data.num_tasks() != sequence.len() {
        return Err(Error::InvalidTaskSequence(format!(
            "data prepared for {} tasks, sequence has {}",
            data.num_tasks(),
            sequence.len()
        )));
    }
    let tee = Tee {
        keep: MemorySink::new(),
        forward: sink,
    };
    let pretrained = pretrain(config, sequence.pretrain(), data, &tee)?;
    data.close_task(0);

    let mut lineages: Vec<(Lineage, u64)> = Vec::new();
    if options.learners.conventional {
        lineages.push((Lineage::Conventional(pretrained.params.clone()), pretrained.steps));
    }
    if options.learners.kalman {
        lineages.push((Lineage::Kalman(pretrained.kalman.clone()), pretrained.steps));
    }

    for (task_index, task) in sequence.tasks().iter().enumerate().skip(1) {
        let ctx_for = |learner| TaskContext {
            task_index,
            task,
            learner,
            data,
            sink: &tee,
        };
        let current = std::mem::take(&mut lineages);
        lineages = if options.threads >= 2 && current.len() >= 2 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = current
                    .into_iter()
                    .map(|(lineage, mut step)| {
                        let ctx = ctx_for(lineage.learner());
                        scope.spawn(move || lineage.train(config, &ctx, &mut step).map(|l| (l, step)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("lineage thread panicked"))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            current
                .into_iter()
                .map(|(lineage, mut step)| {
                    let ctx = ctx_for(lineage.learner());
                    lineage.train(config, &ctx, &mut step).map(|l| (l, step))
                })
                .collect::<Result<Vec<_>>>()?
        };
        data.close_task(task_index);
    }

    let series = tee.keep.into_series();
    let pretrain_series = series.get(&Learner::Pretrain).cloned().unwrap_or_default();
    let pretrain_final = pretrain_series.last().expect("pre-training always records its final batch");
    let task0 = TaskFinal::from_record(sequence.pretrain(), pretrain_final);

    let mut summary = Vec::new();
    let mut final_params = BTreeMap::new();
    let mut final_kalman = None;
    for (lineage, _) in lineages {
        let learner = lineage.learner();
        let mut task_finals = vec![task0.clone()];
        let own = series.get(&learner).map(Vec::as_slice).unwrap_or_default();
        for (t, task) in sequence.tasks().iter().enumerate().skip(1) {
            if let Some(r) = own.iter().rev().find(|r| r.task_index == t) {
                task_finals.push(TaskFinal::from_record(task, r));
            }
        }
        let last = task_finals.last().unwrap();
        summary.push(LearnerSummary {
            learner,
            pretrain_test_drop: task0.acc_pretrain_test - last.acc_pretrain_test,
            pretrain_val_drop: task0.acc_pretrain_val - last.acc_pretrain_val,
            task_finals,
        });
        match lineage {
            Lineage::Conventional(p) => {
                final_params.insert(learner, p);
            }
            Lineage::Kalman(s) => {
                final_params.insert(learner, s.estimate.clone());
                final_kalman = Some(s);
            }
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        tasks: sequence.clone(),
        learners: options.learners,
        pretrain_steps: pretrained.steps,
        initial_covariance_median: median(pretrained.kalman.covariance().iter().copied()),
        series,
        summary,
        final_params,
        final_kalman,
        pretrained: Some(pretrained),
    })
}
