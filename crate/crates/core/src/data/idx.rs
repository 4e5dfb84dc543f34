//! Big-endian IDX reader/writer (the MNIST distribution format).
//!
//! Layout: a `u32` magic (`0x00000803` for rank-3 `u8` images, `0x00000801`
//! for rank-1 `u8` labels), one `u32` per dimension, then the raw bytes.
//! Gzip-compressed files (as distributed) are detected by their header and
//! decompressed transparently.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;

use super::Dataset;
use crate::{Error, IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn io_err(path: &Path, source: std::io::Error) -> IdxError {
    IdxError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IdxError> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| io_err(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| io_err(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses the header, returning the dimensions and the payload slice.
fn parse<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let header = 4 * (rank + 1);
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(IdxError::WrongMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (1..=rank).map(|i| word(i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok((dims, &payload[..expected]))
}

/// Loads an IDX image file and its label file into a normalized [`Dataset`].
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let image_bytes = read_bytes(images_path)?;
    let (dims, pixels) = parse(images_path, &image_bytes, IMAGES_MAGIC, 3)?;
    let (n, width) = (dims[0], dims[1] * dims[2]);

    let label_bytes = read_bytes(labels_path)?;
    let (label_dims, labels) = parse(labels_path, &label_bytes, LABELS_MAGIC, 1)?;
    if label_dims[0] != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: label_dims[0],
        }
        .into());
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let images = Array2::from_shape_vec((n, width), pixels.iter().map(|&p| f32::from(p) / 255.0).collect())
        .expect("payload length checked against header");
    Dataset::new(images, labels.to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
    }
    Ok(())
}

/// Writes images as an IDX3 file with the given image shape. Pixels are
/// quantized back to bytes with `round(v * 255)`. A `.gz` extension selects
/// gzip compression.
pub fn write_idx_images(path: impl AsRef<Path>, dataset: &Dataset, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != dataset.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "write_idx_images",
            expected: dataset.input_dim(),
            actual: rows * cols,
        });
    }
    let mut bytes = Vec::with_capacity(16 + dataset.len() * rows * cols);
    for word in [IMAGES_MAGIC, dataset.len() as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&word.to_be_bytes());
    }
    bytes.extend(dataset.images().iter().map(|&v| (v * 255.0).round() as u8));
    write_file(path.as_ref(), &bytes)
}

pub fn write_idx_labels(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + dataset.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    bytes.extend_from_slice(dataset.labels());
    write_file(path.as_ref(), &bytes)
}

/// Paths of the four canonical MNIST files inside a directory.
#[derive(Clone, Debug)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// Resolves each canonical name, accepting either the raw file or a
    /// `.gz` sibling. A file found in neither form is reported as not found.
    pub fn locate(dir: impl AsRef<Path>) -> Result<Self, IdxError> {
        let dir = dir.as_ref();
        let find = |name: &str| -> Result<PathBuf, IdxError> {
            let plain = dir.join(name);
            let gz = dir.join(format!("{name}.gz"));
            if plain.is_file() {
                Ok(plain)
            } else if gz.is_file() {
                Ok(gz)
            } else {
                Err(io_err(&plain, std::io::ErrorKind::NotFound.into()))
            }
        };
        Ok(MnistFiles {
            train_images: find("train-images-idx3-ubyte")?,
            train_labels: find("train-labels-idx1-ubyte")?,
            test_images: find("t10k-images-idx3-ubyte")?,
            test_labels: find("t10k-labels-idx1-ubyte")?,
        })
    }

    pub fn all(&self) -> [&Path; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }
}

/// Train / validation / test splits. Validation is the tail of the IDX
/// training file.
#[derive(Clone, Debug)]
pub struct MnistSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl MnistSplits {
    pub fn from_parts(train_file: Dataset, test: Dataset, val_size: usize) -> Result<Self> {
        if val_size == 0 || val_size >= train_file.len() {
            return Err(Error::InvalidDataset(format!(
                "validation size {val_size} must be in [1, {})",
                train_file.len()
            )));
        }
        let (train, validation) = train_file.split_at(train_file.len() - val_size)?;
        Ok(MnistSplits {
            train,
            validation,
            test,
        })
    }
}

/// Loads the canonical files from `dir` and holds out the last `val_size`
/// training images for validation.
pub fn load_mnist_dir(dir: impl AsRef<Path>, val_size: usize) -> Result<MnistSplits> {
    let files = MnistFiles::locate(dir)?;
    let train = load_mnist(&files.train_images, &files.train_labels)?;
    let test = load_mnist(&files.test_images, &files.test_labels)?;
    MnistSplits::from_parts(train, test, val_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        std::iter::once(magic)
            .chain(dims.iter().copied())
            .flat_map(u32::to_be_bytes)
            .collect()
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn single_white_image_normalizes_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[1, 28, 28]);
        img.extend(std::iter::repeat_n(255u8, 784));
        let mut lab = header(LABELS_MAGIC, &[1]);
        lab.push(7);
        let ds = load_mnist(write(dir.path(), "i", &img), write(dir.path(), "l", &lab)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input_dim(), 784);
        assert!(ds.images().iter().all(|&v| v == 1.0));
        assert_eq!(ds.labels(), &[7]);
    }

    #[test]
    fn label_magic_on_image_file_is_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(LABELS_MAGIC, &[1, 28, 28]);
        img.extend(std::iter::repeat_n(0u8, 784));
        let lab = [header(LABELS_MAGIC, &[1]), vec![0]].concat();
        let err = load_mnist(write(dir.path(), "i", &img), write(dir.path(), "l", &lab)).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx(IdxError::WrongMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC,
                ..
            })
        ));
    }

    #[test]
    fn truncated_payload_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 28, 28]);
        img.extend(std::iter::repeat_n(0u8, 784 + 10));
        let lab = [header(LABELS_MAGIC, &[2]), vec![0, 1]].concat();
        let err = load_mnist(write(dir.path(), "i", &img), write(dir.path(), "l", &lab)).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Truncated { expected: 1568, found: 794, .. })));

        let short = header(IMAGES_MAGIC, &[2]);
        let err = load_mnist(write(dir.path(), "s", &short), write(dir.path(), "l", &lab)).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::Truncated { .. })));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = header(IMAGES_MAGIC, &[2, 2, 2]);
        img.extend([0u8; 8]);
        let lab = [header(LABELS_MAGIC, &[3]), vec![0, 1, 2]].concat();
        let err = load_mnist(write(dir.path(), "i", &img), write(dir.path(), "l", &lab)).unwrap_err();
        assert!(matches!(err, Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = MnistFiles::locate(dir.path()).unwrap_err();
        assert!(matches!(err, IdxError::Io { .. }));
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) * 20) as f32 / 255.0),
            vec![1, 2, 3],
        )
        .unwrap();
        let ip = dir.path().join("i.gz");
        let lp = dir.path().join("l.gz");
        write_idx_images(&ip, &ds, 2, 2).unwrap();
        write_idx_labels(&lp, &ds).unwrap();
        assert_eq!(load_mnist(&ip, &lp).unwrap(), ds);
    }
}
