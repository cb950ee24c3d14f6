//! Two-phase training: ERM on the prior split for the prior means, then
//! PAC-Bayes posterior training over all of the data.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{DiagDist, Family};
use crate::error::{domain, Error, Result};
use crate::network::ProbNetwork;
use crate::nn::{
    backward, batch_loss, batch_loss_sums, forward, predict, LossConfig, NetworkSpec, Pass,
};
use crate::objectives::{objective_value, train_step, ObjectiveKind, StepState};
use crate::rng::{self, domain as seed_domain};
use crate::scalar::Scalar;

/// Disjoint prior and certificate index sets; the posterior sees everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_total: usize,
    pub prior_indices: Vec<usize>,
    pub cert_indices: Vec<usize>,
    pub posterior_indices: Vec<usize>,
}

impl SplitPlan {
    /// Indices backing the certificate: the held-out part for a learnt prior,
    /// all of the data for a data-free one.
    pub fn bound_indices(&self, mode: PriorMode) -> &[usize] {
        match mode {
            PriorMode::Learnt => &self.cert_indices,
            PriorMode::Random => &self.posterior_indices,
        }
    }
}

/// Uniformly random partition with `round(fraction * n)` prior examples.
/// Both index sets are returned sorted.
pub fn make_split(n_total: usize, prior_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&prior_fraction) {
        return Err(domain(format!(
            "prior_fraction must lie in [0,1), got {prior_fraction}"
        )));
    }
    let mut perm: Vec<usize> = (0..n_total).collect();
    perm.shuffle(&mut rng::derive(seed, seed_domain::SPLIT, 0));
    let n0 = (prior_fraction * n_total as f64).round() as usize;
    let mut prior_indices = perm[..n0].to_vec();
    let mut cert_indices = perm[n0..].to_vec();
    prior_indices.sort_unstable();
    cert_indices.sort_unstable();
    Ok(SplitPlan {
        n_total,
        prior_indices,
        cert_indices,
        posterior_indices: (0..n_total).collect(),
    })
}

/// Classical momentum: `v = m v - lr g`, `w = w + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(lr: f64, momentum: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            momentum,
            velocity: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, group: usize, params: &mut [T], grad: &[T]) {
        let (m, lr) = (T::cast(self.momentum), T::cast(self.lr));
        for ((w, v), &g) in params.iter_mut().zip(&mut self.velocity[group]).zip(grad) {
            *v = m * *v - lr * g;
            *w += *v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    Random,
    Learnt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_prior: usize,
    pub epochs_posterior: usize,
    pub batch_size: usize,
    pub sigma0: f64,
    /// Overrides the rate of every dropout layer during prior training.
    pub dropout_p: Option<f64>,
    pub prior_lr: f64,
    pub prior_momentum: f64,
    pub posterior_lr: f64,
    pub posterior_momentum: f64,
    pub seed: u64,
    pub prior_mode: PriorMode,
    pub prior_fraction: f64,
    pub family: Family,
    /// Held-out share of the training data for the ERM baseline.
    pub validation_fraction: f64,
    pub p_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_prior: 100,
            epochs_posterior: 100,
            batch_size: 250,
            sigma0: 0.03,
            dropout_p: None,
            prior_lr: 0.005,
            prior_momentum: 0.95,
            posterior_lr: 0.001,
            posterior_momentum: 0.95,
            seed: 0,
            prior_mode: PriorMode::Learnt,
            prior_fraction: 0.5,
            family: Family::Gaussian,
            validation_fraction: 0.0,
            p_min: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig { p_min: self.p_min }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(domain(msg)) };
        check(self.batch_size > 0, "batch_size must be positive".into())?;
        check(
            self.sigma0 > 0.0 && self.sigma0.is_finite(),
            format!("sigma0 must be positive, got {}", self.sigma0),
        )?;
        if let Some(p) = self.dropout_p {
            check(
                (0.0..1.0).contains(&p),
                format!("dropout_p must lie in [0,1), got {p}"),
            )?;
        }
        for (name, lr) in [
            ("prior_lr", self.prior_lr),
            ("posterior_lr", self.posterior_lr),
        ] {
            check(
                lr > 0.0 && lr.is_finite(),
                format!("{name} must be positive, got {lr}"),
            )?;
        }
        for (name, m) in [
            ("prior_momentum", self.prior_momentum),
            ("posterior_momentum", self.posterior_momentum),
        ] {
            check(
                (0.0..1.0).contains(&m),
                format!("{name} must lie in [0,1), got {m}"),
            )?;
        }
        check(
            (0.0..1.0).contains(&self.prior_fraction),
            format!(
                "prior_fraction must lie in [0,1), got {}",
                self.prior_fraction
            ),
        )?;
        check(
            self.prior_mode == PriorMode::Learnt || self.prior_fraction == 0.0,
            "a random prior uses no data: prior_fraction must be 0".into(),
        )?;
        check(
            (0.0..1.0).contains(&self.validation_fraction),
            format!(
                "validation_fraction must lie in [0,1), got {}",
                self.validation_fraction
            ),
        )?;
        check(
            self.p_min > 0.0 && self.p_min < 1.0,
            format!("p_min must lie in (0,1), got {}", self.p_min),
        )
    }
}

fn batches(indices: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(size.max(1))
}

/// ERM of the bounded surrogate loss over `indices`, starting from `weights`.
///
/// Dropout layers are active. When `validation` is non-empty the weights with
/// the lowest validation 0-1 error over all epochs are returned.
pub fn train_erm<T: Scalar>(
    spec: &NetworkSpec,
    mut weights: Vec<T>,
    indices: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<Vec<T>> {
    let loss_cfg = cfg.loss();
    let mut opt = OptimizerState::new(cfg.prior_lr, cfg.prior_momentum, &[weights.len()]);
    let mut order = indices.to_vec();
    let mut best: Option<(usize, Vec<T>)> = None;
    for epoch in 0..cfg.epochs_prior {
        let mut r = rng::derive(cfg.seed, seed_domain::PRIOR_TRAIN, epoch as u64);
        order.shuffle(&mut r);
        for idx in batches(&order, cfg.batch_size) {
            let (x, y) = data.batch::<T>(idx);
            let (logits, cache) = forward(spec, &weights, x.view(), Pass::Train(&mut r))?;
            let loss = batch_loss(logits.view(), &y, &loss_cfg)?;
            let grad = backward(&cache, loss.grad.view())?;
            opt.step(0, &mut weights, &grad);
        }
        if !validation.is_empty() {
            let errors =
                deterministic_errors(spec, &weights, validation, cfg.batch_size, data, &loss_cfg)?;
            if best.as_ref().is_none_or(|(e, _)| errors < *e) {
                best = Some((errors, weights.clone()));
            }
        }
    }
    Ok(best.map(|(_, w)| w).unwrap_or(weights))
}

fn deterministic_errors<T: Scalar>(
    spec: &NetworkSpec,
    weights: &[T],
    indices: &[usize],
    batch_size: usize,
    data: &Dataset,
    loss_cfg: &LossConfig,
) -> Result<usize> {
    let mut errors = 0;
    for idx in batches(indices, batch_size) {
        let (x, y) = data.batch::<T>(idx);
        errors += batch_loss_sums(predict(spec, weights, x.view())?.view(), &y, loss_cfg).1;
    }
    Ok(errors)
}

fn spec_for_prior(spec: &NetworkSpec, cfg: &TrainConfig) -> NetworkSpec {
    match cfg.dropout_p {
        Some(p) => spec.with_dropout_rate(p),
        None => spec.clone(),
    }
}

/// Prior distributions: truncated-Gaussian means, ERM-trained on the prior
/// split in learnt mode, with every scale set to `sigma0`.
pub fn train_prior<T: Scalar>(
    spec: &NetworkSpec,
    split: &SplitPlan,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<Vec<DiagDist<T>>> {
    cfg.validate()?;
    spec.validate()?;
    let init = ProbNetwork::<T>::random_prior(
        spec,
        cfg.family,
        cfg.sigma0,
        &mut rng::derive(cfg.seed, seed_domain::INIT, 0),
    );
    if cfg.prior_mode == PriorMode::Random {
        return Ok(init);
    }
    if split.prior_indices.is_empty() {
        return Err(Error::Empty("prior split"));
    }
    let weights: Vec<T> = init.iter().flat_map(|d| d.mu.iter().copied()).collect();
    let weights = train_erm(
        &spec_for_prior(spec, cfg),
        weights,
        &split.prior_indices,
        &[],
        cfg,
        data,
    )?;
    Ok(spec
        .tensors()
        .iter()
        .map(|t| DiagDist::with_scale(cfg.family, weights[t.range()].to_vec(), cfg.sigma0))
        .collect())
}

/// ERM baseline on all training data, holding out `validation_fraction` of it
/// for best-epoch selection. Returns the deterministic weights.
pub fn train_erm_baseline<T: Scalar>(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<Vec<T>> {
    cfg.validate()?;
    spec.validate()?;
    let holdout = make_split(
        data.len(),
        cfg.validation_fraction,
        rng::derive_seed(cfg.seed, seed_domain::SPLIT, 1),
    )?;
    let init = ProbNetwork::<T>::random_prior(
        spec,
        cfg.family,
        cfg.sigma0,
        &mut rng::derive(cfg.seed, seed_domain::INIT, 0),
    );
    let weights = init.iter().flat_map(|d| d.mu.iter().copied()).collect();
    train_erm(
        &spec_for_prior(spec, cfg),
        weights,
        &holdout.cert_indices,
        &holdout.prior_indices,
        cfg,
        data,
    )
}

/// Train-side columns of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub kl: f64,
    pub kl_n: f64,
    pub train_xe: f64,
    pub train_01: f64,
    pub objective: f64,
    pub lambda: Option<f64>,
    pub steps: usize,
}

/// Bounded cross-entropy and 0-1 error over `indices`, one fresh weight
/// sample per batch.
pub fn sampled_train_metrics<T: Scalar>(
    net: &ProbNetwork<T>,
    indices: &[usize],
    batch_size: usize,
    data: &Dataset,
    loss_cfg: &LossConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut r = rng::derive(seed, seed_domain::METRICS, 0);
    let (mut xe, mut errors) = (0.0, 0);
    for idx in batches(indices, batch_size) {
        let w = net.sample_weights(&mut r);
        let (x, y) = data.batch::<T>(idx);
        let (s, e) = batch_loss_sums(predict(&net.spec, &w, x.view())?.view(), &y, loss_cfg);
        xe += s;
        errors += e;
    }
    let n = indices.len() as f64;
    Ok((xe / n, errors as f64 / n))
}

/// Posterior training by SGD on the objective over `split.posterior_indices`.
///
/// The network must arrive with its posterior equal to its prior. The prior
/// is never modified.
pub fn train_posterior<T: Scalar>(
    net: &mut ProbNetwork<T>,
    kind: &mut ObjectiveKind,
    split: &SplitPlan,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TrainMetrics> {
    cfg.validate()?;
    kind.validate()?;
    net.validate()?;
    if net.posterior != net.prior {
        return Err(domain("posterior must be initialised at the prior"));
    }
    let loss_cfg = cfg.loss();
    loss_cfg.validate(net.spec.num_classes)?;
    let mut state = StepState::<T>::new(net, cfg.posterior_lr, cfg.posterior_momentum);
    let mut order = split.posterior_indices.clone();
    let mut steps = 0;
    for epoch in 0..cfg.epochs_posterior {
        order.shuffle(&mut rng::derive(
            cfg.seed,
            seed_domain::SHUFFLE,
            epoch as u64,
        ));
        let mut r = rng::derive(cfg.seed, seed_domain::POSTERIOR_TRAIN, epoch as u64);
        for idx in batches(&order, cfg.batch_size) {
            let (x, y) = data.batch::<T>(idx);
            train_step(net, kind, x.view(), &y, &mut state, &loss_cfg, &mut r)?;
            steps += 1;
        }
    }
    let kl = net.kl()?;
    let (train_xe, train_01) = sampled_train_metrics(
        net,
        &split.posterior_indices,
        cfg.batch_size,
        data,
        &loss_cfg,
        cfg.seed,
    )?;
    Ok(TrainMetrics {
        kl,
        kl_n: kl / split.n_total as f64,
        train_xe,
        train_01,
        objective: objective_value(kind, train_xe, kl),
        lambda: kind.lambda(),
        steps,
    })
}
