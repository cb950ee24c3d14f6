use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;

/// Floor applied to the softmax probability of the true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub p_min: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { p_min: 1e-5 }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.p_min > 0.0 && self.p_min < 1.0 / classes as f64 {
            Ok(())
        } else {
            Err(domain(format!(
                "p_min must lie in (0, 1/{classes}), got {}",
                self.p_min
            )))
        }
    }

    /// `ln(1/p_min)`, the range of the unscaled bounded loss.
    pub fn log_range(&self) -> f64 {
        (1.0 / self.p_min).ln()
    }
}

/// Softmax with max subtraction, in `f64`.
pub fn softmax<T: Scalar>(u: &[T]) -> Vec<f64> {
    let max = u
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = u.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label < classes {
        Ok(())
    } else {
        Err(Error::InvalidLabel { label, classes })
    }
}

/// Rescaled bounded cross-entropy `-ln(max(p_y, p_min)) / ln(1/p_min)` and its
/// gradient with respect to the logits.
pub fn bounded_xe_loss<T: Scalar>(
    logits: &[T],
    label: usize,
    cfg: &LossConfig,
) -> Result<(f64, Vec<T>)> {
    check_label(label, logits.len())?;
    let p = softmax(logits);
    let range = cfg.log_range();
    if p[label] <= cfg.p_min {
        return Ok((1.0, vec![T::zero(); logits.len()]));
    }
    let loss = rescaled(p[label], cfg);
    let grad = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| T::cast((pi - if i == label { 1.0 } else { 0.0 }) / range))
        .collect();
    Ok((loss, grad))
}

/// Bounded cross-entropy from a probability vector (used for ensembles).
pub fn bounded_xe_from_probs(probs: &[f64], label: usize, cfg: &LossConfig) -> f64 {
    rescaled(probs[label], cfg)
}

// The ratio of logs is base-independent; base 10 keeps decimal probabilities
// and floors such as 1e-5 exact.
fn rescaled(p: f64, cfg: &LossConfig) -> f64 {
    (p.max(cfg.p_min).log10() / cfg.p_min.log10()).clamp(0.0, 1.0)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(u: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in u.iter().enumerate().skip(1) {
        if *v > u[best] {
            best = i;
        }
    }
    best
}

pub fn zero_one_loss<T: Scalar>(logits: &[T], label: usize) -> Result<u8> {
    check_label(label, logits.len())?;
    Ok(u8::from(argmax(logits) != label))
}

/// Batch-averaged losses and `d(mean bounded xe)/d(logits)`.
#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    pub bounded_xe: f64,
    pub errors: usize,
    pub grad: Array2<T>,
}

pub fn batch_loss<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<BatchLoss<T>> {
    if logits.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = labels.len() as f64;
    let inv = T::cast(1.0 / n);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    let mut errors = 0;
    for ((row, &y), mut g) in logits.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let row = row.to_vec();
        let (l, gr) = bounded_xe_loss(&row, y, cfg)?;
        total += l;
        errors += usize::from(argmax(&row) != y);
        for (d, v) in g.iter_mut().zip(gr) {
            *d = v * inv;
        }
    }
    Ok(BatchLoss {
        bounded_xe: total / n,
        errors,
        grad,
    })
}

/// Per-batch loss sums without gradients.
pub fn batch_loss_sums<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[usize],
    cfg: &LossConfig,
) -> (f64, usize) {
    let mut total = 0.0;
    let mut errors = 0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let row = row
            .as_slice()
            .map(|s| s.to_vec())
            .unwrap_or_else(|| row.to_vec());
        let p = softmax(&row);
        total += bounded_xe_from_probs(&p, y, cfg);
        errors += usize::from(argmax(&row) != y);
    }
    (total, errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64; 10]);
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let p = softmax(&[1000.0f64, 0.0]);
        assert!(p[0].is_finite() && (p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn uniform_logits_give_a_fifth() {
        let cfg = LossConfig { p_min: 1e-5 };
        let (l, _) = bounded_xe_loss(&[0.0f64; 10], 3, &cfg).unwrap();
        // ln 10 / ln 1e5 = 1/5
        assert_eq!(l, 0.2);
    }

    #[test]
    fn clamp_and_certainty() {
        let cfg = LossConfig { p_min: 1e-5 };
        let (l, g) = bounded_xe_loss(&[0.0f64, 50.0], 0, &cfg).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, _) = bounded_xe_loss(&[800.0f64, 0.0], 0, &cfg).unwrap();
        assert_eq!(l, 0.0);
        assert!(matches!(
            bounded_xe_loss(&[0.0f64, 1.0], 2, &cfg),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn zero_one_examples() {
        assert_eq!(zero_one_loss(&[0.0f64, 1.0, 0.0], 1).unwrap(), 0);
        assert_eq!(zero_one_loss(&[0.0f64, 1.0, 0.0], 2).unwrap(), 1);
        // tie between label 1 and lower index 0 resolves to 0
        assert_eq!(zero_one_loss(&[2.0f64, 2.0, 0.0], 1).unwrap(), 1);
        assert_eq!(zero_one_loss(&[2.0f64, 2.0, 0.0], 0).unwrap(), 0);
        assert!(zero_one_loss(&[0.0f64], 1).is_err());
    }

    #[test]
    fn p_min_validation() {
        assert!(LossConfig { p_min: 1e-5 }.validate(10).is_ok());
        assert!(LossConfig { p_min: 0.1 }.validate(10).is_err());
        assert!(LossConfig { p_min: 0.0 }.validate(10).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = LossConfig { p_min: 1e-5 };
        let u = [0.3f64, -1.2, 2.0, 0.1];
        let (_, g) = bounded_xe_loss(&u, 1, &cfg).unwrap();
        for i in 0..4 {
            let mut a = u;
            let mut b = u;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (bounded_xe_loss(&a, 1, &cfg).unwrap().0
                - bounded_xe_loss(&b, 1, &cfg).unwrap().0)
                / 2e-6;
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn loss_in_unit_interval(u in prop::collection::vec(-200.0..200.0f64, 2..12), y in 0usize..12, p_exp in 1.5..8.0f64) {
            let y = y % u.len();
            let cfg = LossConfig { p_min: 10f64.powf(-p_exp) / u.len() as f64 };
            let (l, _) = bounded_xe_loss(&u, y, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn cross_entropy_dominates_mistake_probability(u in prop::collection::vec(-20.0..20.0f64, 2..10), y in 0usize..10) {
            let y = y % u.len();
            let p = softmax(&u);
            prop_assert!(-p[y].ln() >= 1.0 - p[y] - 1e-12);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(u in prop::collection::vec(-20.0..20.0f64, 2..10), c in -50.0..50.0f64) {
            let a = softmax(&u);
            let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
