//! Datasets: Gaussian blobs, IDX (MNIST-format) files, and batch iteration.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sampling::RngStream;
use crate::tensor::{Tensor, TensorError};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, need {expected} bytes but file has {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(DataError::InvalidParams(format!(
                "{} labels for feature shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DataError::InvalidParams(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// First `n` examples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Self {
            features: self.features.gather_rows(&idx),
            labels: self.labels[..n].to_vec(),
            n_classes: self.n_classes,
        }
    }
}

/// Point on the coordinate axes for class `k`: axis `k mod d`, alternating
/// sign every `d` classes, radius growing by `spacing` every `2d` classes.
pub fn blob_center(k: usize, d: usize, spacing: f64) -> Vec<f64> {
    let ring = k / d;
    let sign = if ring.is_multiple_of(2) { 1.0 } else { -1.0 };
    let radius = spacing * (ring / 2 + 1) as f64;
    let mut c = vec![0.0; d];
    c[k % d] = sign * radius;
    c
}

/// `n_per_class` points per class drawn from `N(center_k, σ² I)`, class-major order.
pub fn gen_blobs(
    rng: &mut RngStream,
    n_per_class: usize,
    n_classes: usize,
    d: usize,
    spacing: f64,
    sigma: f64,
) -> Result<Dataset, DataError> {
    if n_classes < 2 || n_per_class == 0 || d == 0 {
        return Err(DataError::InvalidParams(format!(
            "need n_classes >= 2, n_per_class >= 1, d >= 1 (got {n_classes}, {n_per_class}, {d})"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) || !spacing.is_finite() {
        return Err(DataError::InvalidParams(format!(
            "sigma must be > 0 and spacing finite (got {sigma}, {spacing})"
        )));
    }
    let mut data = Vec::with_capacity(n_per_class * n_classes * d);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for k in 0..n_classes {
        let center = blob_center(k, d, spacing);
        for _ in 0..n_per_class {
            data.extend(center.iter().map(|&c| c + sigma * rng.next_normal()));
            labels.push(k);
        }
    }
    let features = Tensor::new(vec![labels.len(), d], data)?;
    Dataset::new(features, labels, n_classes)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Decoded IDX image file: count, rows, cols and raw pixel bytes.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let total = 16 + count * rows * cols;
    check_len(bytes, total, path)?;
    Ok((count, rows, cols, bytes[16..total].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + count, path)?;
    Ok(bytes[8..8 + count].to_vec())
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]` by `/255`.
/// The class count is `max(label) + 1`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let (count, rows, cols, pixels) = parse_idx_images(&read(images)?, images)?;
    let raw_labels = parse_idx_labels(&read(labels)?, labels)?;
    if raw_labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: raw_labels.len(),
        });
    }
    if count == 0 || rows * cols == 0 {
        return Err(DataError::Empty);
    }
    let features = Tensor::new(
        vec![count, rows * cols],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, n_classes)
}

/// Serializes byte images and labels in IDX format.
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    assert_eq!(pixels.len(), rows * cols * labels.len());
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// A permutation of `0..n`, Fisher–Yates driven by `rng`.
pub fn shuffled_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        idx.swap(i, j);
    }
    idx
}

/// One epoch of batches; the last batch may be short.
pub fn batches(dataset: &Dataset, batch_size: usize, rng: &mut RngStream, shuffle: bool) -> Result<Vec<Batch>, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if batch_size == 0 {
        return Err(DataError::InvalidParams("batch_size must be >= 1".into()));
    }
    let order = if shuffle {
        shuffled_indices(dataset.len(), rng)
    } else {
        (0..dataset.len()).collect()
    };
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            x: dataset.features.gather_rows(chunk),
            labels: chunk.iter().map(|&i| dataset.labels[i]).collect(),
        })
        .collect())
}
