//! Diagonal Gaussian and Laplace distributions over parameter tensors.
//!
//! Scales are parametrised coordinatewise as `sigma = softplus(rho)`. The
//! closed-form KL divergences use the Gaussian variance `sigma^2` and the
//! Laplace density scale `sigma` as the family parameter `b`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
}

/// Independent per-coordinate distribution with means `mu` and pre-scales `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagDist<T> {
    pub family: Family,
    pub mu: Vec<T>,
    pub rho: Vec<T>,
}

/// Standardised noise drawn for one sample, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord<T> {
    pub v: Vec<T>,
}

impl<T: Scalar> DiagDist<T> {
    pub fn new(family: Family, mu: Vec<T>, rho: Vec<T>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::LengthMismatch {
                expected: mu.len(),
                got: rho.len(),
            });
        }
        Ok(Self { family, mu, rho })
    }

    /// Every coordinate gets the same scale `sigma`.
    pub fn with_scale(family: Family, mu: Vec<T>, sigma: f64) -> Self {
        let rho = T::cast(crate::scalar::softplus_inv(sigma));
        let n = mu.len();
        Self {
            family,
            mu,
            rho: vec![rho; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `sigma_i = softplus(rho_i)`.
    pub fn sigma(&self) -> impl Iterator<Item = f64> + '_ {
        self.rho.iter().map(|r| softplus(r.as_f64()))
    }

    /// Draws `W = mu + softplus(rho) * V` and returns the noise `V` with it.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<T>, NoiseRecord<T>) {
        let mut w = Vec::with_capacity(self.len());
        let mut v = Vec::with_capacity(self.len());
        for (m, r) in self.mu.iter().zip(&self.rho) {
            let noise = standard_noise(self.family, rng);
            let s = softplus(r.as_f64());
            w.push(T::cast(m.as_f64() + s * noise));
            v.push(T::cast(noise));
        }
        (w, NoiseRecord { v })
    }

    /// Like [`DiagDist::sample`] but appends to `out` and skips the noise record.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<T>) {
        for (m, r) in self.mu.iter().zip(&self.rho) {
            let noise = standard_noise(self.family, rng);
            out.push(T::cast(m.as_f64() + softplus(r.as_f64()) * noise));
        }
    }
}

fn standard_noise<R: rand::Rng + ?Sized>(family: Family, rng: &mut R) -> f64 {
    match family {
        Family::Gaussian => StandardNormal.sample(rng),
        Family::Laplace => {
            // inverse CDF, U uniform on (-1/2, 1/2)
            let mut u: f64 = rng.random::<f64>() - 0.5;
            while u == -0.5 {
                u = rng.random::<f64>() - 0.5;
            }
            -u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
    }
}

fn check_pair<T: Scalar>(posterior: &DiagDist<T>, prior: &DiagDist<T>) -> Result<()> {
    if posterior.family != prior.family {
        return Err(Error::FamilyMismatch(posterior.family, prior.family));
    }
    if posterior.len() != prior.len() {
        return Err(Error::LengthMismatch {
            expected: prior.len(),
            got: posterior.len(),
        });
    }
    Ok(())
}

/// `KL(posterior || prior)`, summed over coordinates, in `f64`.
pub fn kl_to_prior<T: Scalar>(posterior: &DiagDist<T>, prior: &DiagDist<T>) -> Result<f64> {
    check_pair(posterior, prior)?;
    let mut total = 0.0;
    for i in 0..posterior.len() {
        let (m1, s1) = (
            posterior.mu[i].as_f64(),
            softplus(posterior.rho[i].as_f64()),
        );
        let (m0, s0) = (prior.mu[i].as_f64(), softplus(prior.rho[i].as_f64()));
        total += match posterior.family {
            Family::Gaussian => kl_gauss(m1, s1 * s1, m0, s0 * s0),
            Family::Laplace => kl_laplace(m1, s1, m0, s0),
        };
    }
    Ok(total.max(0.0))
}

/// One-dimensional Gaussian KL with variances `b1`, `b0`.
pub fn kl_gauss(m1: f64, b1: f64, m0: f64, b0: f64) -> f64 {
    let d = m1 - m0;
    0.5 * ((b0 / b1).ln() + d * d / b0 + b1 / b0 - 1.0)
}

/// One-dimensional Laplace KL with density scales `b1`, `b0`.
pub fn kl_laplace(m1: f64, b1: f64, m0: f64, b0: f64) -> f64 {
    let d = (m1 - m0).abs();
    (b0 / b1).ln() + d / b0 + (b1 / b0) * (-d / b1).exp() - 1.0
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact partials of [`kl_to_prior`] with respect to the posterior's `mu` and `rho`.
pub fn kl_gradients<T: Scalar>(
    posterior: &DiagDist<T>,
    prior: &DiagDist<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut gm = vec![T::zero(); posterior.len()];
    let mut gr = vec![T::zero(); posterior.len()];
    add_kl_gradients(posterior, prior, 1.0, &mut gm, &mut gr)?;
    Ok((gm, gr))
}

/// Accumulates `scale * dKL/dmu` and `scale * dKL/drho` into the buffers.
pub fn add_kl_gradients<T: Scalar>(
    posterior: &DiagDist<T>,
    prior: &DiagDist<T>,
    scale: f64,
    grad_mu: &mut [T],
    grad_rho: &mut [T],
) -> Result<()> {
    check_pair(posterior, prior)?;
    if grad_mu.len() != posterior.len() || grad_rho.len() != posterior.len() {
        return Err(Error::LengthMismatch {
            expected: posterior.len(),
            got: grad_mu.len(),
        });
    }
    for i in 0..posterior.len() {
        let rho1 = posterior.rho[i].as_f64();
        let (m1, s1) = (posterior.mu[i].as_f64(), softplus(rho1));
        let (m0, s0) = (prior.mu[i].as_f64(), softplus(prior.rho[i].as_f64()));
        let d = m1 - m0;
        let (d_mu, d_sigma) = match posterior.family {
            Family::Gaussian => {
                let v0 = s0 * s0;
                (d / v0, -1.0 / s1 + s1 / v0)
            }
            Family::Laplace => {
                let e = (-d.abs() / s1).exp();
                (
                    sign0(d) * (1.0 - e) / s0,
                    -1.0 / s1 + e * (1.0 + d.abs() / s1) / s0,
                )
            }
        };
        grad_mu[i] += T::cast(scale * d_mu);
        grad_rho[i] += T::cast(scale * d_sigma * sigmoid(rho1));
    }
    Ok(())
}

/// Routes `dF/dW` at `W = mu + softplus(rho) * V` to `(dF/dmu, dF/drho)`.
pub fn backprop_to_params<T: Scalar>(
    grad_w: &[T],
    noise: &NoiseRecord<T>,
    dist: &DiagDist<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut gm = vec![T::zero(); dist.len()];
    let mut gr = vec![T::zero(); dist.len()];
    add_backprop_to_params(grad_w, noise, dist, T::one(), &mut gm, &mut gr)?;
    Ok((gm, gr))
}

/// Accumulating form of [`backprop_to_params`], scaling `grad_w` by `scale`.
pub fn add_backprop_to_params<T: Scalar>(
    grad_w: &[T],
    noise: &NoiseRecord<T>,
    dist: &DiagDist<T>,
    scale: T,
    grad_mu: &mut [T],
    grad_rho: &mut [T],
) -> Result<()> {
    let n = dist.len();
    for len in [grad_w.len(), noise.v.len(), grad_mu.len(), grad_rho.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    for i in 0..n {
        let g = scale * grad_w[i];
        grad_mu[i] += g;
        grad_rho[i] += g * noise.v[i] * T::cast(sigmoid(dist.rho[i].as_f64()));
    }
    Ok(())
}

/// Centred Gaussian draws with std `1/sqrt(n_in)`, rejected outside two std.
pub fn init_prior_means<T: Scalar, R: rand::Rng + ?Sized>(
    len: usize,
    n_in: usize,
    rng: &mut R,
) -> Vec<T> {
    let std = 1.0 / (n_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::cast(z * std);
            }
        })
        .collect()
}
