//! MNIST ingestion and drift-task construction.

mod batch;
mod idx;
mod task;
mod transform;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

pub use batch::{batch_index_plan, batches, epoch_order, BatchStream};
pub use idx::{load_mnist, load_mnist_dir, write_idx_images, write_idx_labels, MnistFiles, MnistSplits};
pub use task::{make_task_sequence, parse_kind, SequenceConfig, TaskSequence, TaskSpec, DEFAULT_PERMUTE_SEED};
pub use transform::{apply_transform, permute_pixels, shift_labels, Permutation, Transform};

/// Number of classes in every task of the drift sequence.
pub const NUM_CLASSES: usize = 10;

/// Flattened MNIST image width (28 x 28).
pub const MNIST_PIXELS: usize = 784;

/// Images (one row per sample, intensities in `[0, 1]`) with their class labels.
///
/// Storage is shared, so clones and label-only transforms do not copy pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Arc<Array2<f32>>,
    labels: Arc<Vec<u8>>,
}

impl Dataset {
    pub fn new(images: Array2<f32>, labels: Vec<u8>) -> Result<Self> {
        Self::from_shared(Arc::new(images), Arc::new(labels))
    }

    pub(crate) fn from_shared(images: Arc<Array2<f32>>, labels: Arc<Vec<u8>>) -> Result<Self> {
        if labels.is_empty() || images.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if images.nrows() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} image rows but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if images.ncols() == 0 {
            return Err(Error::InvalidDataset("images have zero width".into()));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDataset(format!("pixel value {v} outside [0, 1]")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                num_classes: NUM_CLASSES,
            });
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: a dataset holds at least one sample.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn images(&self) -> ArrayView2<'_, f32> {
        self.images.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub(crate) fn shared_images(&self) -> &Arc<Array2<f32>> {
        &self.images
    }

    pub(crate) fn shared_labels(&self) -> &Arc<Vec<u8>> {
        &self.labels
    }

    /// Gathers the given rows into an `f64` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images = self.images.select(Axis(0), indices).mapv(f64::from);
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        Batch::new(images, labels)
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Batch {
        Batch {
            images: self.images.mapv(f64::from),
            labels: self.labels.iter().map(|&l| l as usize).collect(),
        }
    }

    /// Splits into the first `at` rows and the remainder.
    pub fn split_at(&self, at: usize) -> Result<(Dataset, Dataset)> {
        if at == 0 || at >= self.len() {
            return Err(Error::InvalidDataset(format!(
                "cannot split {} samples at {at}",
                self.len()
            )));
        }
        let head = self.images.slice(ndarray::s![..at, ..]).to_owned();
        let tail = self.images.slice(ndarray::s![at.., ..]).to_owned();
        Ok((
            Dataset::new(head, self.labels[..at].to_vec())?,
            Dataset::new(tail, self.labels[at..].to_vec())?,
        ))
    }
}

/// One mini-batch `D_k`: an `f64` image matrix and class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(images: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.nrows() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "batch has {} image rows but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if let Some(v) = images.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite pixel {v} in batch")));
        }
        Ok(Batch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
