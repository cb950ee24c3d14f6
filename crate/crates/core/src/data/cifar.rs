//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 32x32 pixels for each of the red, green and blue channels.

use std::path::PathBuf;

use ndarray::Array2;

use super::{read_file, DataError, Dataset};

pub const RECORD: usize = 3073;
const PIXELS: usize = 3072;

/// Labels and raw channel-major pixels of one batch file.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
        return Err(DataError::BadRecordSize(bytes.len()));
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (index, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(DataError::BadLabel {
                index,
                label: rec[0],
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_cifar10(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * RECORD);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(PIXELS)) {
        out.push(*l);
        out.extend_from_slice(px);
    }
    out
}

pub fn cifar_from_batches(batches: &[Vec<u8>]) -> Result<Dataset, DataError> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for b in batches {
        let (l, p) = parse_cifar10(b)?;
        labels.extend(l.into_iter().map(usize::from));
        pixels.extend(p.into_iter().map(|v| v as f32 / 255.0));
    }
    let features = Array2::from_shape_vec((labels.len(), PIXELS), pixels)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(features, vec![3, 32, 32], labels, 10)
}

pub fn load_cifar10_bin(paths: &[PathBuf]) -> Result<Dataset, DataError> {
    let batches = paths
        .iter()
        .map(|p| read_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    cifar_from_batches(&batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..PIXELS).map(|i| (i * 7 % 256) as u8));
        r
    }

    #[test]
    fn single_record_round_trips() {
        let bytes = record(4);
        let (labels, pixels) = parse_cifar10(&bytes).unwrap();
        assert_eq!(labels, vec![4]);
        assert_eq!(encode_cifar10(&labels, &pixels), bytes);
        let d = cifar_from_batches(std::slice::from_ref(&bytes)).unwrap();
        assert_eq!(d.sample_shape, vec![3, 32, 32]);
        // green channel starts at byte 1025 of the record
        assert_eq!(d.features[[0, 1024]], bytes[1025] as f32 / 255.0);
    }

    #[test]
    fn bad_sizes_and_labels() {
        let mut bytes = record(1);
        bytes.pop();
        assert!(matches!(
            parse_cifar10(&bytes),
            Err(DataError::BadRecordSize(_))
        ));
        assert!(matches!(
            parse_cifar10(&record(10)),
            Err(DataError::BadLabel { .. })
        ));
        assert!(parse_cifar10(&[]).is_err());
    }

    #[test]
    fn truncations_never_panic() {
        let mut bytes = record(2);
        bytes.extend(record(3));
        for cut in 0..bytes.len() {
            if cut != RECORD {
                assert!(parse_cifar10(&bytes[..cut]).is_err());
            }
        }
    }
}
