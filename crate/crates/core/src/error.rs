use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),

    #[error("noise floor must be positive and finite, got {0}")]
    InvalidFloor(f64),

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    #[error("kalman gain undefined at index {0}: prior covariance and noise are both zero")]
    ZeroDenominator(usize),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("unknown transform kind `{0}`")]
    UnknownTransform(String),

    #[error("invalid task sequence: {0}")]
    InvalidTaskSequence(String),

    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),

    #[error("data for task {0} is no longer available")]
    TaskClosed(usize),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that originate in reading or validating input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Idx(_) | Error::EmptyDataset | Error::InvalidDataset(_) | Error::TaskClosed(_)
        )
    }
}

/// Failures while reading IDX files. Each malformation has its own variant.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: wrong magic number {found:#010x}, expected {expected:#010x}")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
