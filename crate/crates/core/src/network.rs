use crate::distributions::{init_prior_means, kl_to_prior, DiagDist, Family, NoiseRecord};
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::scalar::Scalar;

/// A network whose parameter tensors each carry a prior and a posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbNetwork<T> {
    pub spec: NetworkSpec,
    pub prior: Vec<DiagDist<T>>,
    pub posterior: Vec<DiagDist<T>>,
}

impl<T: Scalar> ProbNetwork<T> {
    /// Posterior initialised at the prior.
    pub fn from_prior(spec: NetworkSpec, prior: Vec<DiagDist<T>>) -> Result<Self> {
        let net = Self {
            spec,
            posterior: prior.clone(),
            prior,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn new(
        spec: NetworkSpec,
        prior: Vec<DiagDist<T>>,
        posterior: Vec<DiagDist<T>>,
    ) -> Result<Self> {
        let net = Self {
            spec,
            prior,
            posterior,
        };
        net.validate()?;
        Ok(net)
    }

    /// Prior means drawn from the truncated-Gaussian init, scales `sigma0`.
    pub fn random_prior<R: rand::Rng + ?Sized>(
        spec: &NetworkSpec,
        family: Family,
        sigma0: f64,
        rng: &mut R,
    ) -> Vec<DiagDist<T>> {
        spec.tensors()
            .iter()
            .map(|t| DiagDist::with_scale(family, init_prior_means(t.len, t.n_in, rng), sigma0))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let tensors = self.spec.tensors();
        for set in [&self.prior, &self.posterior] {
            if set.len() != tensors.len() {
                return Err(Error::LengthMismatch {
                    expected: tensors.len(),
                    got: set.len(),
                });
            }
        }
        for ((t, p), q) in tensors.iter().zip(&self.prior).zip(&self.posterior) {
            if p.family != q.family {
                return Err(Error::FamilyMismatch(q.family, p.family));
            }
            for d in [p, q] {
                if d.len() != t.len || d.rho.len() != t.len {
                    return Err(Error::LengthMismatch {
                        expected: t.len,
                        got: d.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.posterior
            .first()
            .map(|d| d.family)
            .unwrap_or(Family::Gaussian)
    }

    pub fn num_params(&self) -> usize {
        self.posterior.iter().map(|d| d.len()).sum()
    }

    /// `KL(Q || Q0)` over all tensors.
    pub fn kl(&self) -> Result<f64> {
        let mut total = 0.0;
        for (q, p) in self.posterior.iter().zip(&self.prior) {
            total += kl_to_prior(q, p)?;
        }
        Ok(total)
    }

    /// One flat weight sample with the per-tensor noise that produced it.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (Vec<T>, Vec<NoiseRecord<T>>) {
        let mut w = Vec::with_capacity(self.num_params());
        let mut noise = Vec::with_capacity(self.posterior.len());
        for d in &self.posterior {
            let (wi, vi) = d.sample(rng);
            w.extend_from_slice(&wi);
            noise.push(vi);
        }
        (w, noise)
    }

    /// One flat weight sample; consumes the generator exactly like [`Self::sample`].
    pub fn sample_weights<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut w = Vec::with_capacity(self.num_params());
        for d in &self.posterior {
            d.sample_into(rng, &mut w);
        }
        w
    }

    pub fn posterior_means(&self) -> Vec<T> {
        self.posterior
            .iter()
            .flat_map(|d| d.mu.iter().copied())
            .collect()
    }

    pub fn prior_means(&self) -> Vec<T> {
        self.prior
            .iter()
            .flat_map(|d| d.mu.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn posterior_starts_at_prior() {
        let spec = NetworkSpec::mlp(3, &[4], 2, None);
        let prior = ProbNetwork::<f32>::random_prior(
            &spec,
            Family::Gaussian,
            0.03,
            &mut rng::derive(1, 2, 3),
        );
        let net = ProbNetwork::from_prior(spec, prior).unwrap();
        assert_eq!(net.kl().unwrap(), 0.0);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn sample_and_sample_weights_agree() {
        let spec = NetworkSpec::mlp(3, &[4], 2, None);
        let prior = ProbNetwork::<f64>::random_prior(
            &spec,
            Family::Laplace,
            0.1,
            &mut rng::derive(1, 2, 3),
        );
        let net = ProbNetwork::from_prior(spec, prior).unwrap();
        let (a, _) = net.sample(&mut rng::derive(5, 0, 0));
        let b = net.sample_weights(&mut rng::derive(5, 0, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_tensors_are_rejected() {
        let spec = NetworkSpec::mlp(3, &[4], 2, None);
        let prior = ProbNetwork::<f64>::random_prior(
            &spec,
            Family::Gaussian,
            0.1,
            &mut rng::derive(1, 2, 3),
        );
        let mut post = prior.clone();
        post[0].mu.pop();
        assert!(ProbNetwork::new(spec, prior, post).is_err());
    }
}
