use std::path::PathBuf;

use pbb_core::data::{
    encode_cifar10, encode_idx_images, encode_idx_labels, load_cifar10_bin, load_mnist_idx,
    standardize,
};
use pbb_core::DataError;

fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn mnist_files_load_as_scaled_images() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i % 256) as u8).collect();
    let images = write(&dir, "images", &encode_idx_images(&pixels, 3, 28, 28));
    let labels = write(&dir, "labels", &encode_idx_labels(&[7, 0, 9]));
    let data = load_mnist_idx(&images, &labels).unwrap();
    assert_eq!(data.sample_shape, vec![1, 28, 28]);
    assert_eq!(data.labels, vec![7, 0, 9]);
    assert_eq!(data.k, 10);
    assert_eq!(data.features[[0, 255]], 1.0);
    assert_eq!(data.features[[0, 0]], 0.0);
}

#[test]
fn mismatched_mnist_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let images = write(
        &dir,
        "images",
        &encode_idx_images(&[0; 2 * 28 * 28], 2, 28, 28),
    );
    let labels = write(&dir, "labels", &encode_idx_labels(&[1, 2, 3]));
    assert!(matches!(
        load_mnist_idx(&images, &labels),
        Err(DataError::CountMismatch { .. })
    ));
    let missing = dir.path().join("missing");
    assert!(matches!(
        load_mnist_idx(&missing, &labels),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn cifar_batches_concatenate_and_standardize() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(&dir, "a.bin", &encode_cifar10(&[1, 2], &vec![10; 2 * 3072]));
    let b = write(&dir, "b.bin", &encode_cifar10(&[3], &vec![200; 3072]));
    let mut data = load_cifar10_bin(&[a, b]).unwrap();
    assert_eq!(data.labels, vec![1, 2, 3]);
    assert_eq!(data.sample_shape, vec![3, 32, 32]);
    let stats = standardize(&mut data, &mut []).unwrap();
    assert_eq!(stats.mean.len(), 3);
    let col: Vec<f32> = data.features.column(0).to_vec();
    assert!(col[0] < 0.0 && col[2] > 0.0);
}

#[test]
fn broken_cifar_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let short = write(&dir, "short.bin", &[0; 3000]);
    assert!(matches!(
        load_cifar10_bin(&[short]),
        Err(DataError::BadRecordSize(3000))
    ));
    let mut bad = encode_cifar10(&[0], &[0; 3072]);
    bad[0] = 12;
    let bad = write(&dir, "bad.bin", &bad);
    assert!(matches!(
        load_cifar10_bin(&[bad]),
        Err(DataError::BadLabel { .. })
    ));
}
