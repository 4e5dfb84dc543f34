use serde::{Deserialize, Serialize};

use super::Transform;
use crate::{Error, Result};

/// Default seed for the permuted task's pixel permutation.
pub const DEFAULT_PERMUTE_SEED: u64 = 42;

/// One segment of the drift sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub transform: Transform,
    pub epochs: usize,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, transform: Transform, epochs: usize) -> Result<Self> {
        transform.validate()?;
        if epochs == 0 {
            return Err(Error::InvalidTaskSequence("epochs must be at least 1".into()));
        }
        Ok(TaskSpec {
            name: name.into(),
            transform,
            epochs,
        })
    }
}

/// Ordered tasks; index 0 is the pre-training task and is always the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence(Vec<TaskSpec>);

impl TaskSequence {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::InvalidTaskSequence("sequence is empty".into()))?;
        if !first.transform.is_identity() {
            return Err(Error::InvalidTaskSequence(format!(
                "first task `{}` must use the identity transform, found {}",
                first.name, first.transform
            )));
        }
        if let Some(t) = tasks.iter().find(|t| t.epochs == 0) {
            return Err(Error::InvalidTaskSequence(format!("task `{}` has zero epochs", t.name)));
        }
        Ok(TaskSequence(tasks))
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pretrain(&self) -> &TaskSpec {
        &self.0[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    /// Transform kind per task: `identity`, `permute_pixels` or `shift_labels`.
    pub kinds: Vec<String>,
    pub permute_seed: u64,
    pub shift_offset: u8,
    pub epochs_per_task: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            kinds: vec!["identity".into(), "permute_pixels".into(), "shift_labels".into()],
            permute_seed: DEFAULT_PERMUTE_SEED,
            shift_offset: 1,
            epochs_per_task: 5,
        }
    }
}

/// Parses a transform kind name, accepting a few spellings.
pub fn parse_kind(kind: &str, permute_seed: u64, shift_offset: u8) -> Result<(&'static str, Transform)> {
    match kind.trim().to_ascii_lowercase().as_str() {
        "identity" | "original" => Ok(("original", Transform::Identity)),
        "permute_pixels" | "permute" | "permuted" => {
            Ok(("permuted", Transform::PermutePixels { seed: permute_seed }))
        }
        "shift_labels" | "label_shift" | "shift" => {
            Ok(("label_shift", Transform::shift_labels(shift_offset)?))
        }
        _ => Err(Error::UnknownTransform(kind.to_string())),
    }
}

pub fn make_task_sequence(config: &SequenceConfig) -> Result<TaskSequence> {
    let tasks = config
        .kinds
        .iter()
        .map(|k| {
            let (name, transform) = parse_kind(k, config.permute_seed, config.shift_offset)?;
            TaskSpec::new(name, transform, config.epochs_per_task)
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSequence::new(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sequence_matches_original_permuted_label_changed() {
        let seq = make_task_sequence(&SequenceConfig::default()).unwrap();
        let names: Vec<&str> = seq.tasks().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["original", "permuted", "label_shift"]);
        assert_eq!(seq.tasks()[1].transform, Transform::PermutePixels { seed: DEFAULT_PERMUTE_SEED });
        assert_eq!(seq.tasks()[2].transform, Transform::ShiftLabels { offset: 1 });
        assert!(seq.tasks().iter().all(|t| t.epochs == 5));
    }

    #[test]
    fn single_task_sequence() {
        let cfg = SequenceConfig {
            kinds: vec!["identity".into()],
            ..Default::default()
        };
        assert_eq!(make_task_sequence(&cfg).unwrap().len(), 1);
    }

    #[test]
    fn non_identity_first_task_rejected() {
        let cfg = SequenceConfig {
            kinds: vec!["permute_pixels".into(), "identity".into()],
            ..Default::default()
        };
        assert!(matches!(make_task_sequence(&cfg), Err(Error::InvalidTaskSequence(_))));
    }

    #[test]
    fn unknown_kind_rejected() {
        let cfg = SequenceConfig {
            kinds: vec!["identity".into(), "rotate".into()],
            ..Default::default()
        };
        assert!(matches!(make_task_sequence(&cfg), Err(Error::UnknownTransform(k)) if k == "rotate"));
    }

    #[test]
    fn empty_and_zero_epochs_rejected() {
        assert!(TaskSequence::new(vec![]).is_err());
        assert!(TaskSpec::new("x", Transform::Identity, 0).is_err());
    }
}
