//! Datasets: MNIST IDX and CIFAR-10 binary readers, standardisation, and
//! synthetic Gaussian blobs.

mod cifar;
mod idx;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use cifar::{encode_cifar10, load_cifar10_bin, parse_cifar10};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_idx, parse_idx_images, parse_idx_labels,
};
pub use synthetic::synthetic_blobs;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("file size {0} is not a multiple of the 3073-byte record size")]
    BadRecordSize(usize),
    #[error("label {label} out of range at record {index}")]
    BadLabel { index: usize, label: u8 },
    #[error("unexpected image dimensions {0:?}")]
    BadDims(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Per-channel statistics computed on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Examples as rows of `features`, each laid out as `sample_shape` (channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f32>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        features: Array2<f32>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        k: usize,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        if sample_shape.iter().product::<usize>() != features.ncols() {
            return Err(DataError::BadDims(sample_shape));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(DataError::BadLabel {
                index,
                label: label.min(255) as u8,
            });
        }
        Ok(Self {
            features,
            sample_shape,
            labels,
            k,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        if self.sample_shape.len() == 3 {
            self.sample_shape[0]
        } else {
            1
        }
    }

    /// Rows `idx` converted to the compute scalar, with their labels.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> (Array2<T>, Vec<usize>) {
        let d = self.features.ncols();
        let mut x = Array2::zeros((idx.len(), d));
        for (mut row, &i) in x.rows_mut().into_iter().zip(idx) {
            for (dst, &src) in row.iter_mut().zip(self.features.row(i)) {
                *dst = T::cast(src as f64);
            }
        }
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            sample_shape: self.sample_shape.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            standardization: self.standardization.clone(),
        }
    }

    /// Per-channel mean and (population) std of the features.
    pub fn channel_stats(&self) -> Standardization {
        let c = self.channels();
        let per = self.features.ncols() / c;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let count = (self.len() * per) as f64;
        for row in self.features.rows() {
            for (j, &v) in row.iter().enumerate() {
                mean[j / per] += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for row in self.features.rows() {
            for (j, &v) in row.iter().enumerate() {
                let d = v as f64 - mean[j / per];
                sq[j / per] += d * d;
            }
        }
        let std = sq.iter().map(|s| (s / count).sqrt()).collect();
        Standardization { mean, std }
    }

    /// Applies `(x - mean) / max(std, floor)` channelwise.
    pub fn apply_standardization(&mut self, stats: &Standardization) {
        let c = self.channels();
        let per = self.features.ncols() / c;
        for mut row in self.features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let ch = j / per;
                *v = ((*v as f64 - stats.mean[ch]) / stats.std[ch].max(STD_FLOOR)) as f32;
            }
        }
        self.standardization = Some(stats.clone());
    }
}

/// Standardises `train` with its own channel statistics and `others` with the
/// same statistics.
pub fn standardize(
    train: &mut Dataset,
    others: &mut [&mut Dataset],
) -> Result<Standardization, DataError> {
    if train.is_empty() {
        return Err(DataError::Invalid(
            "cannot standardise an empty training set".into(),
        ));
    }
    let stats = train.channel_stats();
    train.apply_standardization(&stats);
    for d in others.iter_mut() {
        if d.channels() != train.channels() {
            return Err(DataError::Invalid(
                "channel count differs from the training set".into(),
            ));
        }
        d.apply_standardization(&stats);
    }
    Ok(stats)
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
