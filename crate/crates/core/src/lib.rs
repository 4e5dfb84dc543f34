//! Kalman-filter weight modifier for neural networks trained under concept drift.
//!
//! The crate is split along the lines of the experiment it drives:
//!
//! - [`nn`]: a dense ReLU network over a flat parameter vector, with exact
//!   backpropagation and plain SGD.
//! - [`kalman`]: a diagonal, per-parameter Kalman filter that fuses each
//!   SGD-trained model with the running estimate.
//! - [`data`]: MNIST IDX loading, the drift transforms (pixel permutation,
//!   label shift) and deterministic mini-batch streams.
//! - [`trainer`]: the sequential-task protocol comparing a conventional SGD
//!   learner with the Kalman-modified learner.
//! - [`checkpoint`]: binary checkpoints for parameters and filter state.
//! - [`selftest`]: a small embedded property suite used by the CLI.
//!
//! Everything is computed in `f64` and every operation is deterministic given
//! its inputs and seeds.

pub mod checkpoint;
pub mod data;
mod error;
pub mod kalman;
pub mod nn;
pub mod selftest;
pub mod trainer;

pub use error::{Error, IdxError, Result};
