#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kalman_drift::data::{write_idx_images, write_idx_labels, Dataset};
use ndarray::Array2;

pub const TOY_WIDTH: usize = 12;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kalman-drift"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf")
}

/// Separable toy digits: pixel `label` is bright, the rest a fixed pattern.
fn toy(n: usize, salt: usize) -> Dataset {
    let labels: Vec<u8> = (0..n).map(|i| ((i * 7 + salt) % 10) as u8).collect();
    let images = Array2::from_shape_fn((n, TOY_WIDTH), |(i, j)| {
        if j == labels[i] as usize {
            1.0
        } else {
            ((i * 31 + j * 17 + salt) % 64) as f32 / 255.0
        }
    });
    Dataset::new(images, labels).unwrap()
}

/// Writes a tiny four-file IDX directory (train 120, test 40).
pub fn write_toy_mnist(dir: &Path) {
    let train = toy(120, 0);
    let test = toy(40, 3);
    write_idx_images(dir.join("train-images-idx3-ubyte"), &train, 3, 4).unwrap();
    write_idx_labels(dir.join("train-labels-idx1-ubyte"), &train).unwrap();
    write_idx_images(dir.join("t10k-images-idx3-ubyte.gz"), &test, 3, 4).unwrap();
    write_idx_labels(dir.join("t10k-labels-idx1-ubyte.gz"), &test).unwrap();
}

/// Overrides that fit the default config to the toy data.
pub const TOY_OVERRIDES: &[&str] = &[
    "--set",
    "layers=12,16,10",
    "--set",
    "val_size=20",
    "--set",
    "batch_size=8",
    "--set",
    "epochs_per_task=2",
    "--set",
    "eval_every=4",
];
