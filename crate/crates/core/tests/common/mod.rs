#![allow(dead_code)]

use kalman_drift::data::{Dataset, MnistSplits};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_WIDTH: usize = 12;

/// Ten separable clusters: pixel `label` is bright, the rest low noise.
pub fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let images = Array2::from_shape_fn((n, TOY_WIDTH), |(i, j)| {
        if j == labels[i] as usize {
            rng.random_range(0.7f32..=1.0)
        } else {
            rng.random_range(0.0f32..0.3)
        }
    });
    Dataset::new(images, labels).unwrap()
}

pub fn toy_splits(n_train: usize, n_val: usize, n_test: usize) -> MnistSplits {
    let train_file = toy_dataset(n_train + n_val, 1);
    MnistSplits::from_parts(train_file, toy_dataset(n_test, 2), n_val).unwrap()
}
