use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Dataset};
use crate::{Error, Result};

/// The shuffled visiting order of `0..n` for one epoch.
pub fn epoch_order(n: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
}

/// Splits the shuffled order into consecutive chunks of `batch_size`; the
/// final chunk may be shorter.
pub fn batch_index_plan(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    Ok(epoch_order(n, epoch_seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Single-consumer stream of mini-batches over one epoch.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    plan: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream<'_> {
    /// Batches not yet yielded.
    pub fn remaining(&self) -> usize {
        self.plan.len()
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let idx = self.plan.next()?;
        Some(self.dataset.batch(&idx).expect("indices come from 0..len"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.plan.len(), Some(self.plan.len()))
    }
}

impl ExactSizeIterator for BatchStream<'_> {}

pub fn batches(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<BatchStream<'_>> {
    Ok(BatchStream {
        dataset,
        plan: batch_index_plan(dataset.len(), batch_size, epoch_seed)?.into_iter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn ten_by_four_gives_4_4_2() {
        let sizes: Vec<usize> = batch_index_plan(10, 4, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn plan_covers_every_index_once() {
        let mut all: Vec<usize> = batch_index_plan(37, 5, 9).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_order() {
        assert_eq!(batch_index_plan(50, 7, 3).unwrap(), batch_index_plan(50, 7, 3).unwrap());
        assert_ne!(batch_index_plan(50, 7, 3).unwrap(), batch_index_plan(50, 7, 4).unwrap());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batch_index_plan(5, 0, 0).is_err());
    }

    #[test]
    fn stream_yields_batches() {
        let ds = Dataset::new(Array2::zeros((10, 3)), (0..10).collect()).unwrap();
        let stream = batches(&ds, 4, 1).unwrap();
        assert_eq!(stream.len(), 3);
        let mut labels: Vec<usize> = stream.flat_map(|b| b.labels).collect();
        labels.sort_unstable();
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
    }
}
