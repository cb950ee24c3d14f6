use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset};
use crate::rng;

/// Class centres for `k` blobs in `dims` dimensions.
///
/// With two or more dimensions the centres sit on a circle in the first two
/// coordinates with neighbouring centres `separation` apart; in one dimension
/// they sit on a line with spacing `separation`. Centres depend only on
/// `(k, dims, separation)`, so train and test sets drawn with different seeds
/// share them.
pub fn blob_centres(k: usize, dims: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut centre = vec![0.0; dims];
            if dims == 1 {
                centre[0] = (c as f64 - (k as f64 - 1.0) / 2.0) * separation;
            } else {
                let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                centre[0] = radius * angle.cos();
                centre[1] = radius * angle.sin();
            }
            centre
        })
        .collect()
}

/// `n` points from `k` unit-variance Gaussian clusters, balanced across classes.
pub fn synthetic_blobs(
    n: usize,
    k: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n == 0 || k == 0 || dims == 0 {
        return Err(DataError::Invalid("n, k and dims must be positive".into()));
    }
    let centres = blob_centres(k, dims, separation);
    let mut r = rng::derive(seed, rng::domain::DATA, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut r);
    let mut x = Array2::zeros((n, dims));
    for (mut row, &y) in x.rows_mut().into_iter().zip(&labels) {
        for (v, c) in row.iter_mut().zip(&centres[y]) {
            let z: f64 = StandardNormal.sample(&mut r);
            *v = (c + z) as f32;
        }
    }
    Dataset::new(x, vec![dims], labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    // nearest-centre classifier, the Bayes rule for equal isotropic blobs
    fn nearest_centre_error(d: &Dataset, centres: &[Vec<f64>]) -> f64 {
        let mut wrong = 0;
        for (row, &y) in d.features.rows().into_iter().zip(&d.labels) {
            let dist = |c: &Vec<f64>| {
                row.iter()
                    .zip(c)
                    .map(|(&a, b)| (a as f64 - b).powi(2))
                    .sum::<f64>()
            };
            let best = (0..centres.len())
                .min_by(|&a, &b| dist(&centres[a]).total_cmp(&dist(&centres[b])))
                .unwrap();
            wrong += usize::from(best != y);
        }
        wrong as f64 / d.len() as f64
    }

    #[test]
    fn zero_separation_is_chance() {
        let d = synthetic_blobs(20_000, 4, 3, 0.0, 1).unwrap();
        // all centres coincide: any rule is right one time in k
        let mut counts = [0usize; 4];
        d.labels.iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c == 5000));
        let centres = blob_centres(4, 3, 0.0);
        let err = nearest_centre_error(&d, &centres);
        assert!((err - 0.75).abs() < 0.02, "{err}");
    }

    #[test]
    fn well_separated_blobs_are_linearly_separable() {
        let d = synthetic_blobs(4000, 2, 2, 10.0, 2).unwrap();
        let err = nearest_centre_error(&d, &blob_centres(2, 2, 10.0));
        assert!(err <= 0.01, "{err}");
        let c = blob_centres(2, 2, 10.0);
        let gap: f64 = c[0]
            .iter()
            .zip(&c[1])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((gap - 10.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            synthetic_blobs(50, 3, 2, 4.0, 9).unwrap(),
            synthetic_blobs(50, 3, 2, 4.0, 9).unwrap()
        );
        assert_ne!(
            synthetic_blobs(50, 3, 2, 4.0, 9).unwrap(),
            synthetic_blobs(50, 3, 2, 4.0, 10).unwrap()
        );
    }
}
