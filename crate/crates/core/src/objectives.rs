//! Training objectives and the reparametrised gradient step.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    classic_from_penalty, confidence_log_term, lambda_from_penalty, quad_from_penalty,
};
use crate::distributions::{add_backprop_to_params, add_kl_gradients};
use crate::error::{domain, Result};
use crate::network::ProbNetwork;
use crate::nn::{backward, batch_loss, forward, LossConfig, Pass};
use crate::scalar::Scalar;
use crate::trainer::OptimizerState;

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 2.0 - 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Quad,
    Lambda { lambda: f64 },
    Classic,
    Bbb { eta: f64 },
    Erm,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Quad => "quad",
            Variant::Lambda { .. } => "lambda",
            Variant::Classic => "classic",
            Variant::Bbb { .. } => "bbb",
            Variant::Erm => "erm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveKind {
    pub variant: Variant,
    pub delta: f64,
    /// Size of the posterior-training set.
    pub n_objective: usize,
}

/// Partials of an objective with respect to its scalar inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveGradients {
    pub d_emp: f64,
    pub d_kl: f64,
    pub d_lambda: Option<f64>,
}

impl ObjectiveKind {
    pub fn new(variant: Variant, delta: f64, n_objective: usize) -> Result<Self> {
        let k = Self {
            variant,
            delta,
            n_objective,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(domain(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.n_objective == 0 {
            return Err(domain("n_objective must be at least 1"));
        }
        match self.variant {
            Variant::Lambda { lambda } if !(lambda > 0.0 && lambda < 2.0) => {
                Err(domain(format!("lambda must lie in (0,2), got {lambda}")))
            }
            Variant::Bbb { eta } if !(eta > 0.0) => {
                Err(domain(format!("eta must be positive, got {eta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.variant {
            Variant::Lambda { lambda } => Some(lambda),
            _ => None,
        }
    }

    fn n(&self) -> f64 {
        self.n_objective as f64
    }

    fn penalty(&self, kl_div: f64) -> f64 {
        (kl_div + confidence_log_term(self.n_objective, self.delta)) / self.n()
    }
}

/// Objective value for a surrogate empirical term and a KL divergence.
pub fn objective_value(kind: &ObjectiveKind, emp: f64, kl_div: f64) -> f64 {
    match kind.variant {
        Variant::Quad => quad_from_penalty(emp, kind.penalty(kl_div)),
        Variant::Classic => classic_from_penalty(emp, kind.penalty(kl_div)),
        Variant::Lambda { lambda } => lambda_from_penalty(emp, kind.penalty(kl_div), lambda),
        Variant::Bbb { eta } => emp + eta * kl_div / kind.n(),
        Variant::Erm => emp,
    }
}

pub fn objective_gradients(kind: &ObjectiveKind, emp: f64, kl_div: f64) -> ObjectiveGradients {
    let n = kind.n();
    match kind.variant {
        Variant::Quad => {
            let h = kind.penalty(kl_div) / 2.0;
            let (a, b) = ((emp + h).sqrt(), h.sqrt());
            let s = a + b;
            // d/dh (a + b)^2 = (a + b)(1/a + 1/b), dh/dkl = 1/(2n)
            ObjectiveGradients {
                d_emp: s / a,
                d_kl: s * (1.0 / a + 1.0 / b) / (2.0 * n),
                d_lambda: None,
            }
        }
        Variant::Classic => {
            let h = kind.penalty(kl_div) / 2.0;
            ObjectiveGradients {
                d_emp: 1.0,
                d_kl: 1.0 / (4.0 * n * h.sqrt()),
                d_lambda: None,
            }
        }
        Variant::Lambda { lambda } => {
            let g = 1.0 - lambda / 2.0;
            let b = kind.penalty(kl_div);
            ObjectiveGradients {
                d_emp: 1.0 / g,
                d_kl: 1.0 / (n * lambda * g),
                d_lambda: Some(
                    emp / (2.0 * g * g) - b * (1.0 - lambda) / (lambda * lambda * g * g),
                ),
            }
        }
        Variant::Bbb { eta } => ObjectiveGradients {
            d_emp: 1.0,
            d_kl: eta / n,
            d_lambda: None,
        },
        Variant::Erm => ObjectiveGradients {
            d_emp: 1.0,
            d_kl: 0.0,
            d_lambda: None,
        },
    }
}

/// Optimiser state for one posterior-training run.
#[derive(Debug, Clone)]
pub struct StepState<T> {
    pub mu: OptimizerState<T>,
    pub rho: OptimizerState<T>,
    pub lambda: OptimizerState<f64>,
}

impl<T: Scalar> StepState<T> {
    pub fn new<U: Scalar>(net: &ProbNetwork<U>, lr: f64, momentum: f64) -> Self {
        let sizes: Vec<usize> = net.posterior.iter().map(|d| d.len()).collect();
        Self {
            mu: OptimizerState::new(lr, momentum, &sizes),
            rho: OptimizerState::new(lr, momentum, &sizes),
            lambda: OptimizerState::new(lr, momentum, &[1]),
        }
    }
}

/// What one step observed, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub emp: f64,
    pub kl: f64,
    pub objective: f64,
    pub errors: usize,
}

/// Posterior gradients of the full objective at one weight sample.
pub struct ParamGradients<T> {
    pub mu: Vec<Vec<T>>,
    pub rho: Vec<Vec<T>>,
    pub scalars: ObjectiveGradients,
    pub report: StepReport,
}

/// Objective gradients with respect to every `(mu, rho)` for the given noise.
///
/// The weights are `mu + softplus(rho) * V` with `V` drawn from `rng`; the
/// surrogate term is the batch mean of the bounded cross-entropy.
pub fn parameter_gradients<T: Scalar, R: rand::Rng + ?Sized>(
    net: &ProbNetwork<T>,
    kind: &ObjectiveKind,
    inputs: ArrayView2<T>,
    labels: &[usize],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<ParamGradients<T>> {
    let (weights, noise) = net.sample(rng);
    let (logits, cache) = forward(&net.spec, &weights, inputs, Pass::Eval)?;
    let loss = batch_loss(logits.view(), labels, cfg)?;
    let grad_w = backward(&cache, loss.grad.view())?;
    let kl = net.kl()?;
    let emp = loss.bounded_xe;
    let scalars = objective_gradients(kind, emp, kl);
    let d_emp = T::cast(scalars.d_emp);
    let mut mu = Vec::with_capacity(net.posterior.len());
    let mut rho = Vec::with_capacity(net.posterior.len());
    for (i, (t, q)) in net.spec.tensors().iter().zip(&net.posterior).enumerate() {
        let mut gm = vec![T::zero(); t.len];
        let mut gr = vec![T::zero(); t.len];
        add_backprop_to_params(&grad_w[t.range()], &noise[i], q, d_emp, &mut gm, &mut gr)?;
        if scalars.d_kl != 0.0 {
            add_kl_gradients(q, &net.prior[i], scalars.d_kl, &mut gm, &mut gr)?;
        }
        mu.push(gm);
        rho.push(gr);
    }
    let report = StepReport {
        emp,
        kl,
        objective: objective_value(kind, emp, kl),
        errors: loss.errors,
    };
    Ok(ParamGradients {
        mu,
        rho,
        scalars,
        report,
    })
}

/// One stochastic-gradient step on the posterior (and on lambda, when present).
pub fn train_step<T: Scalar, R: rand::Rng + ?Sized>(
    net: &mut ProbNetwork<T>,
    kind: &mut ObjectiveKind,
    inputs: ArrayView2<T>,
    labels: &[usize],
    state: &mut StepState<T>,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<StepReport> {
    let grads = parameter_gradients(net, kind, inputs, labels, cfg, rng)?;
    let finite = grads
        .mu
        .iter()
        .chain(&grads.rho)
        .all(|g| g.iter().all(|v| v.is_finite()));
    if !finite || !grads.report.objective.is_finite() {
        return Err(domain(
            "non-finite objective or gradient; the learning rate may be too large",
        ));
    }
    for (i, q) in net.posterior.iter_mut().enumerate() {
        state.mu.step(i, &mut q.mu, &grads.mu[i]);
        state.rho.step(i, &mut q.rho, &grads.rho[i]);
    }
    if let (Variant::Lambda { lambda }, Some(d)) = (&mut kind.variant, grads.scalars.d_lambda) {
        let mut l = [*lambda];
        state.lambda.step(0, &mut l, &[d]);
        *lambda = l[0].clamp(LAMBDA_MIN, LAMBDA_MAX);
    }
    Ok(grads.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiagDist, Family};
    use crate::nn::{LayerSpec, NetworkSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn kind(variant: Variant, n: usize, delta: f64) -> ObjectiveKind {
        ObjectiveKind::new(variant, delta, n).unwrap()
    }

    #[test]
    fn value_examples() {
        assert_abs_diff_eq!(
            objective_value(&kind(Variant::Quad, 100, 0.05), 0.0, 0.0),
            0.119_829_290_942_159_6,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            objective_value(&kind(Variant::Bbb { eta: 1.0 }, 100, 0.05), 0.3, 5.0),
            0.35,
            epsilon = 1e-15
        );
        assert_eq!(
            objective_value(&kind(Variant::Erm, 100, 0.05), 0.12, 123.0),
            0.12
        );
    }

    #[test]
    fn bbb_and_erm_partials() {
        let g = objective_gradients(&kind(Variant::Bbb { eta: 0.3 }, 200, 0.05), 0.2, 4.0);
        assert_eq!((g.d_emp, g.d_kl), (1.0, 0.3 / 200.0));
        let g = objective_gradients(&kind(Variant::Erm, 200, 0.05), 0.2, 4.0);
        assert_eq!((g.d_emp, g.d_kl), (1.0, 0.0));
    }

    #[test]
    fn lambda_one_is_stationary_at_zero_emp() {
        let g = objective_gradients(&kind(Variant::Lambda { lambda: 1.0 }, 500, 0.025), 0.0, 3.0);
        assert_abs_diff_eq!(g.d_lambda.unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_kinds() {
        assert!(ObjectiveKind::new(Variant::Lambda { lambda: 2.0 }, 0.05, 10).is_err());
        assert!(ObjectiveKind::new(Variant::Bbb { eta: 0.0 }, 0.05, 10).is_err());
        assert!(ObjectiveKind::new(Variant::Quad, 1.0, 10).is_err());
        assert!(ObjectiveKind::new(Variant::Quad, 0.05, 0).is_err());
    }

    fn fd_scalar_partials(k: &ObjectiveKind, emp: f64, kl: f64) -> (f64, f64, Option<f64>) {
        let h = 1e-6;
        let de = (objective_value(k, emp + h, kl) - objective_value(k, emp - h, kl)) / (2.0 * h);
        let dk = (objective_value(k, emp, kl + h) - objective_value(k, emp, kl - h)) / (2.0 * h);
        let dl = k.lambda().map(|l| {
            let mut a = *k;
            let mut b = *k;
            a.variant = Variant::Lambda { lambda: l + h };
            b.variant = Variant::Lambda { lambda: l - h };
            (objective_value(&a, emp, kl) - objective_value(&b, emp, kl)) / (2.0 * h)
        });
        (de, dk, dl)
    }

    proptest! {
        #[test]
        fn scalar_partials_match_finite_differences(
            emp in 0.01..0.99f64, kl in 0.01..50.0f64, n in 10usize..100_000,
            lambda in 0.05..1.95f64, eta in 0.01..2.0f64, which in 0usize..5,
        ) {
            let variant = [Variant::Quad, Variant::Classic, Variant::Lambda { lambda }, Variant::Bbb { eta }, Variant::Erm][which];
            let k = kind(variant, n, 0.025);
            let g = objective_gradients(&k, emp, kl);
            let (de, dk, dl) = fd_scalar_partials(&k, emp, kl);
            prop_assert!((g.d_emp - de).abs() <= 1e-8 * (1.0 + de.abs()), "d_emp {} vs {}", g.d_emp, de);
            prop_assert!((g.d_kl - dk).abs() <= 1e-8 * (1.0 + dk.abs()), "d_kl {} vs {}", g.d_kl, dk);
            if let (Some(a), Some(b)) = (g.d_lambda, dl) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "d_lambda {} vs {}", a, b);
            }
        }
    }

    fn toy_net(rho: f64) -> ProbNetwork<f64> {
        let spec = NetworkSpec {
            input_shape: vec![1],
            layers: vec![LayerSpec::Linear { input: 1, out: 2 }],
            num_classes: 2,
        };
        let prior: Vec<DiagDist<f64>> = vec![
            DiagDist::new(Family::Gaussian, vec![0.5, -0.5], vec![rho; 2]).unwrap(),
            DiagDist::new(Family::Gaussian, vec![0.0, 0.0], vec![rho; 2]).unwrap(),
        ];
        ProbNetwork::from_prior(spec, prior).unwrap()
    }

    #[test]
    fn erm_step_on_point_mass_is_plain_sgd() {
        let mut net = toy_net(-60.0);
        let mut k = kind(Variant::Erm, 10, 0.05);
        let cfg = LossConfig::default();
        let x = Array2::from_elem((1, 1), 1.0);
        let mut state = StepState::new(&net, 0.1, 0.0);
        // hand computation: logits (0.5, -0.5), label 1
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        let range = cfg.log_range();
        let expected_w = [
            0.5 - 0.1 * p0 / range,
            -0.5 - 0.1 * (1.0 - p0 - 1.0) / range,
        ];
        let mut r = crate::rng::derive(0, 0, 0);
        train_step(&mut net, &mut k, x.view(), &[1], &mut state, &cfg, &mut r).unwrap();
        assert_abs_diff_eq!(net.posterior[0].mu[0], expected_w[0], epsilon = 1e-12);
        assert_abs_diff_eq!(net.posterior[0].mu[1], expected_w[1], epsilon = 1e-12);
        assert_eq!(net.posterior[0].rho, vec![-60.0; 2]);
    }

    #[test]
    fn lambda_stays_clamped() {
        let mut net = toy_net(-3.0);
        let mut k = kind(Variant::Lambda { lambda: 1.0 }, 10, 0.05);
        let cfg = LossConfig::default();
        let x = Array2::from_elem((1, 1), 1.0);
        // huge lambda learning rate pushes it against the clamp
        let mut state = StepState::new(&net, 1e-3, 0.9);
        state.lambda.lr = 50.0;
        let mut r = crate::rng::derive(0, 0, 0);
        for _ in 0..50 {
            train_step(&mut net, &mut k, x.view(), &[0], &mut state, &cfg, &mut r).unwrap();
            let l = k.lambda().unwrap();
            assert!((LAMBDA_MIN..=LAMBDA_MAX).contains(&l), "{l}");
        }
    }
}
