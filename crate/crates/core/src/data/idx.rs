//! Big-endian IDX containers as used by MNIST.

use std::path::Path;

use ndarray::Array2;

use super::{read_file, DataError, Dataset};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Truncated {
            needed: at + 4,
            found: bytes.len(),
        })
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

/// Raw `u8` pixels and `(count, rows, cols)` of an IDX image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize), DataError> {
    expect_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let needed = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| DataError::Invalid("IDX dimensions overflow".into()))?;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok((bytes[16..needed].to_vec(), count, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    expect_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let needed = count
        .checked_add(8)
        .ok_or_else(|| DataError::Invalid("IDX count overflow".into()))?;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a 10-class dataset of `1 x rows x cols` images scaled to `[0,1]`.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let (pixels, count, rows, cols) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(DataError::BadLabel { index, label });
    }
    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )
    .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(
        features,
        vec![1, rows, cols],
        labels.iter().map(|&l| l as usize).collect(),
        10,
    )
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    mnist_from_bytes(&read_file(images_path)?, &read_file(labels_path)?)
}
