//! Drift transforms: a fixed pixel permutation (virtual drift) and a cyclic
//! label shift (real drift).

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, NUM_CLASSES};
use crate::{Error, Result};

/// A bijection on pixel positions. Applying it sets `out[j] = in[perm[j]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    /// Fisher-Yates shuffle of `0..n` driven by ChaCha8 seeded with `seed`.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Permutation(idx)
    }

    pub fn from_vec(indices: Vec<usize>) -> Result<Self> {
        let p = Permutation(indices);
        if !p.is_bijection() {
            return Err(Error::InvalidTransform("indices are not a permutation".into()));
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        for &i in &self.0 {
            if i >= seen.len() || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (j, &i) in self.0.iter().enumerate() {
            inv[i] = j;
        }
        Permutation(inv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    PermutePixels { seed: u64 },
    ShiftLabels { offset: u8 },
}

impl Transform {
    pub fn shift_labels(offset: u8) -> Result<Self> {
        let t = Transform::ShiftLabels { offset };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::ShiftLabels { offset } if offset == 0 || offset as usize >= NUM_CLASSES => {
                Err(Error::InvalidTransform(format!(
                    "label offset {offset} must be in [1, {NUM_CLASSES})"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Transform::Identity)
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => write!(f, "identity"),
            Transform::PermutePixels { seed } => write!(f, "permute_pixels(seed={seed})"),
            Transform::ShiftLabels { offset } => write!(f, "shift_labels(+{offset})"),
        }
    }
}

/// Reorders every image row by `perm`. Labels are shared, not copied.
pub fn permute_pixels(dataset: &Dataset, perm: &Permutation) -> Result<Dataset> {
    if perm.len() != dataset.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "permute_pixels",
            expected: dataset.input_dim(),
            actual: perm.len(),
        });
    }
    let images: Array2<f32> = dataset.images().select(Axis(1), perm.as_slice());
    Dataset::from_shared(Arc::new(images), dataset.shared_labels().clone())
}

/// `label <- (label + offset) mod 10`. Images are shared, not copied.
pub fn shift_labels(dataset: &Dataset, offset: u8) -> Result<Dataset> {
    Transform::ShiftLabels { offset }.validate()?;
    let labels = dataset
        .labels()
        .iter()
        .map(|&l| ((l as usize + offset as usize) % NUM_CLASSES) as u8)
        .collect();
    Dataset::from_shared(dataset.shared_images().clone(), Arc::new(labels))
}

pub fn apply_transform(dataset: &Dataset, transform: &Transform) -> Result<Dataset> {
    match *transform {
        Transform::Identity => Ok(dataset.clone()),
        Transform::PermutePixels { seed } => {
            permute_pixels(dataset, &Permutation::from_seed(dataset.input_dim(), seed))
        }
        Transform::ShiftLabels { offset } => shift_labels(dataset, offset),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        Dataset::new(
            array![[0.0, 0.1, 0.2, 0.3], [0.4, 0.5, 0.6, 0.7]],
            vec![3, 9],
        )
        .unwrap()
    }

    #[test]
    fn shift_by_one_maps_three_to_four_and_wraps_nine() {
        let shifted = apply_transform(&toy(), &Transform::ShiftLabels { offset: 1 }).unwrap();
        assert_eq!(shifted.labels(), &[4, 0]);
        assert_eq!(shifted.images(), toy().images());
    }

    #[test]
    fn permutation_round_trip() {
        let ds = toy();
        let perm = Permutation::from_seed(4, 11);
        assert!(perm.is_bijection());
        let p = permute_pixels(&ds, &perm).unwrap();
        assert_eq!(p.labels(), ds.labels());
        assert_eq!(permute_pixels(&p, &perm.inverse()).unwrap(), ds);
    }

    #[test]
    fn permutation_explicit() {
        let perm = Permutation::from_vec(vec![3, 0, 1, 2]).unwrap();
        let p = permute_pixels(&toy(), &perm).unwrap();
        assert_eq!(p.images().row(0).to_vec(), vec![0.3, 0.0, 0.1, 0.2]);
        assert!(Permutation::from_vec(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_vec(vec![0, 3]).is_err());
    }

    #[test]
    fn identity_is_equal_and_input_untouched() {
        let ds = toy();
        let before = ds.clone();
        assert_eq!(apply_transform(&ds, &Transform::Identity).unwrap(), ds);
        let _ = apply_transform(&ds, &Transform::PermutePixels { seed: 3 }).unwrap();
        let _ = apply_transform(&ds, &Transform::ShiftLabels { offset: 4 }).unwrap();
        assert_eq!(ds, before);
    }

    #[test]
    fn offset_range_enforced() {
        assert!(Transform::shift_labels(0).is_err());
        assert!(Transform::shift_labels(10).is_err());
        assert!(Transform::shift_labels(9).is_ok());
        assert!(shift_labels(&toy(), 10).is_err());
    }

    #[test]
    fn mnist_sized_permutation_is_bijection() {
        let perm = Permutation::from_seed(784, 0);
        let mut sorted = perm.as_slice().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..784).collect::<Vec<_>>());
        assert_ne!(perm.as_slice(), &sorted[..]);
        assert_eq!(Permutation::from_seed(784, 0), perm);
    }
}
