//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; omitted keys take the defaults below. Overrides given on the
//! command line are applied after the file and win over it.
//!
//! ```text
//! layers           = 784,256,10
//! lr               = 0.1
//! batch_size       = 64
//! epochs_per_task  = 5
//! noise_floor      = 1e-12
//! covariance_floor = 1e-12      # defaults to noise_floor
//! noise_transform  = square     # square | abs
//! eval_every       = 50
//! seed             = 0
//! tasks            = identity,permute_pixels,shift_labels
//! permute_seed     = 42
//! shift_offset     = 1
//! val_size         = 5000
//! ```

use std::fmt;
use std::path::Path;

use kalman_drift::data::{make_task_sequence, SequenceConfig, TaskSequence, NUM_CLASSES};
use kalman_drift::kalman::NoiseTransform;
use kalman_drift::nn::Architecture;
use kalman_drift::trainer::TrainerConfig;
use kalman_drift::Error;

pub const KEYS: &[&str] = &[
    "layers",
    "lr",
    "batch_size",
    "epochs_per_task",
    "noise_floor",
    "covariance_floor",
    "noise_transform",
    "eval_every",
    "seed",
    "tasks",
    "permute_seed",
    "shift_offset",
    "val_size",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub sequence: SequenceConfig,
    pub val_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trainer: TrainerConfig::default(),
            sequence: SequenceConfig::default(),
            val_size: 5000,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse `{value}`")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (key, value) = (key.trim(), value.trim());
        let t = &mut self.trainer;
        match key {
            "layers" => {
                let sizes = list(value)
                    .iter()
                    .map(|s| parse_num::<usize>("layers", s))
                    .collect::<Result<Vec<_>, _>>()?;
                t.architecture = Architecture::new(sizes).map_err(|e| ConfigError::new("layers", e.to_string()))?;
            }
            "lr" => t.lr = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs_per_task" => {
                t.epochs_per_task = parse_num(key, value)?;
                self.sequence.epochs_per_task = t.epochs_per_task;
            }
            "noise_floor" => t.noise_floor = parse_num(key, value)?,
            "covariance_floor" => t.covariance_floor = Some(parse_num(key, value)?),
            "noise_transform" => {
                t.noise_transform = value
                    .parse::<NoiseTransform>()
                    .map_err(|e| ConfigError::new(key, e))?
            }
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "tasks" => self.sequence.kinds = list(value),
            "permute_seed" => self.sequence.permute_seed = parse_num(key, value)?,
            "shift_offset" => self.sequence.shift_offset = parse_num(key, value)?,
            "val_size" => self.val_size = parse_num(key, value)?,
            other => return Err(ConfigError::new(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(assignment, "expected key=value"))?;
        self.set(key, value)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", lineno + 1), "expected key = value"))?;
            config.set(key, value)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every invariant, reporting the first violated one.
    pub fn validate(&self) -> Result<TaskSequence, ConfigError> {
        if let Err(Error::InvalidConfig(msg)) = self.trainer.validate() {
            let (field, message) = msg.split_once(": ").unwrap_or(("config", &msg));
            return Err(ConfigError::new(field, message));
        }
        if self.trainer.architecture.num_classes() != NUM_CLASSES {
            return Err(ConfigError::new(
                "layers",
                format!("output layer must have {NUM_CLASSES} units"),
            ));
        }
        if self.val_size == 0 {
            return Err(ConfigError::new("val_size", "must be at least 1"));
        }
        make_task_sequence(&self.sequence).map_err(|e| match e {
            Error::InvalidTransform(_) => ConfigError::new("shift_offset", e.to_string()),
            _ => ConfigError::new("tasks", e.to_string()),
        })
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let t = &self.trainer;
        let layers: Vec<String> = t.architecture.layer_sizes().iter().map(ToString::to_string).collect();
        let values = [
            layers.join(","),
            t.lr.to_string(),
            t.batch_size.to_string(),
            t.epochs_per_task.to_string(),
            format!("{:e}", t.noise_floor),
            format!("{:e}", t.covariance_floor()),
            t.noise_transform.name().to_string(),
            t.eval_every.to_string(),
            t.seed.to_string(),
            self.sequence.kinds.join(","),
            self.sequence.permute_seed.to_string(),
            self.sequence.shift_offset.to_string(),
            self.val_size.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
