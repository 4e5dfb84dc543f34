//! Command-line harness: `run`, `check` and `selftest`.

pub mod commands;
pub mod config;
pub mod output;
