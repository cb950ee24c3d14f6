//! Monte-Carlo risk certificates and test-time predictors.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{kl_inversion, mc_loss_upper, BoundBudget, PenTerm};
use crate::data::Dataset;
use crate::error::{domain, Error, Result};
use crate::network::ProbNetwork;
use crate::nn::{
    argmax, batch_loss_sums, bounded_xe_from_probs, predict, softmax, LossConfig, NetworkSpec,
};
use crate::rng::{self, domain as seed_domain};
use crate::scalar::Scalar;
use crate::trainer::{PriorMode, SplitPlan};

/// Rows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 1000;
pub const VACUOUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    BoundedXe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCertificate {
    pub loss_kind: LossKind,
    pub mc_avg: f64,
    pub mc_upper: f64,
    pub kl_div: f64,
    pub penalty_b: f64,
    pub cert_value: f64,
    pub budget: BoundBudget,
    pub vacuous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub stochastic_01: f64,
    pub stochastic_xe: f64,
    pub deterministic_01: f64,
    pub deterministic_xe: f64,
    pub ensemble_01: f64,
    pub ensemble_xe: f64,
    pub ensemble_size: usize,
}

/// Losses of one weight sample summed over a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct LossSums {
    xe: f64,
    errors: u64,
}

fn chunked<T: Scalar>(data: &Dataset, indices: &[usize]) -> Vec<(Array2<T>, Vec<usize>)> {
    indices
        .chunks(EVAL_CHUNK)
        .map(|idx| data.batch::<T>(idx))
        .collect()
}

fn sums_for<T: Scalar>(
    spec: &NetworkSpec,
    w: &[T],
    chunks: &[(Array2<T>, Vec<usize>)],
    cfg: &LossConfig,
) -> Result<LossSums> {
    let mut s = LossSums::default();
    for (x, y) in chunks {
        let (xe, e) = batch_loss_sums(predict(spec, w, x.view())?.view(), y, cfg);
        s.xe += xe;
        s.errors += e as u64;
    }
    Ok(s)
}

/// Empirical 0-1 error and bounded cross-entropy of the empirical
/// distribution of `m` posterior samples over `indices`.
///
/// Sample `j` is drawn from its own counter-derived stream, and the per-sample
/// sums are reduced in index order, so the result does not depend on the
/// thread count. The 0-1 average is an exact count over `m * |indices|`.
pub fn mc_losses<T: Scalar>(
    net: &ProbNetwork<T>,
    data: &Dataset,
    indices: &[usize],
    m: usize,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Empty("certificate set"));
    }
    if m == 0 {
        return Err(domain("m must be at least 1"));
    }
    let chunks = chunked::<T>(data, indices);
    let per_sample: Vec<LossSums> = (0..m)
        .into_par_iter()
        .map(|j| {
            let w = net.sample_weights(&mut rng::derive(seed, seed_domain::MC, j as u64));
            sums_for(&net.spec, &w, &chunks, cfg)
        })
        .collect::<Result<_>>()?;
    let total = (m * indices.len()) as f64;
    let errors: u64 = per_sample.iter().map(|s| s.errors).sum();
    let xe: f64 = per_sample.iter().map(|s| s.xe).sum();
    Ok((errors as f64 / total, xe / total))
}

pub fn mc_estimate<T: Scalar>(
    net: &ProbNetwork<T>,
    data: &Dataset,
    indices: &[usize],
    m: usize,
    loss_kind: LossKind,
    cfg: &LossConfig,
    seed: u64,
) -> Result<f64> {
    let (zo, xe) = mc_losses(net, data, indices, m, cfg, seed)?;
    Ok(match loss_kind {
        LossKind::ZeroOne => zo,
        LossKind::BoundedXe => xe,
    })
}

/// Nested certificate from a Monte-Carlo average.
pub fn certificate_from_average(
    loss_kind: LossKind,
    mc_avg: f64,
    kl_div: f64,
    budget: &BoundBudget,
) -> Result<RiskCertificate> {
    budget.validate()?;
    let mc_upper = mc_loss_upper(mc_avg, budget.m_mc, budget.delta_prime)?;
    let pen = PenTerm::new(kl_div, budget.n_bound, budget.delta)?;
    let penalty_b = pen.value();
    let cert_value = kl_inversion(mc_upper, penalty_b)?;
    Ok(RiskCertificate {
        loss_kind,
        mc_avg,
        mc_upper,
        kl_div,
        penalty_b,
        cert_value,
        budget: *budget,
        vacuous: cert_value >= 1.0 - VACUOUS_TOL,
    })
}

fn check_n_bound(split: &SplitPlan, mode: PriorMode, budget: &BoundBudget) -> Result<()> {
    let expected = split.bound_indices(mode).len();
    if budget.n_bound != expected {
        return Err(domain(format!(
            "n_bound is {} but the {:?} prior leaves {expected} examples for the bound",
            budget.n_bound, mode
        )));
    }
    Ok(())
}

/// Certificates for both losses from one set of `m` samples.
pub fn certify_both<T: Scalar>(
    net: &ProbNetwork<T>,
    split: &SplitPlan,
    mode: PriorMode,
    data: &Dataset,
    budget: &BoundBudget,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(RiskCertificate, RiskCertificate)> {
    budget.validate()?;
    check_n_bound(split, mode, budget)?;
    let kl = net.kl()?;
    let (zo, xe) = mc_losses(net, data, split.bound_indices(mode), budget.m_mc, cfg, seed)?;
    Ok((
        certificate_from_average(LossKind::ZeroOne, zo, kl, budget)?,
        certificate_from_average(LossKind::BoundedXe, xe, kl, budget)?,
    ))
}

pub fn certify<T: Scalar>(
    net: &ProbNetwork<T>,
    split: &SplitPlan,
    mode: PriorMode,
    data: &Dataset,
    budget: &BoundBudget,
    loss_kind: LossKind,
    cfg: &LossConfig,
    seed: u64,
) -> Result<RiskCertificate> {
    let (zo, xe) = certify_both(net, split, mode, data, budget, cfg, seed)?;
    Ok(match loss_kind {
        LossKind::ZeroOne => zo,
        LossKind::BoundedXe => xe,
    })
}

/// Bounded cross-entropy and 0-1 error of fixed weights over a whole dataset.
pub fn fixed_weight_losses<T: Scalar>(
    spec: &NetworkSpec,
    weights: &[T],
    data: &Dataset,
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let s = sums_for(spec, weights, &chunked::<T>(data, &idx), cfg)?;
    let n = data.len() as f64;
    Ok((s.xe / n, s.errors as f64 / n))
}

fn member_weights<T: Scalar>(net: &ProbNetwork<T>, ensemble_size: usize, seed: u64) -> Vec<Vec<T>> {
    (0..ensemble_size)
        .into_par_iter()
        .map(|e| net.sample_weights(&mut rng::derive(seed, seed_domain::ENSEMBLE, e as u64)))
        .collect()
}

/// Majority class per row of `votes` (members x examples), lowest class on ties.
fn majority(votes: &[Vec<usize>], classes: usize) -> Vec<usize> {
    let n = votes.first().map_or(0, |v| v.len());
    (0..n)
        .map(|i| {
            let mut counts = vec![0usize; classes];
            votes.iter().for_each(|v| counts[v[i]] += 1);
            argmax(&counts)
        })
        .collect()
}

fn member_outputs<T: Scalar>(
    spec: &NetworkSpec,
    members: &[Vec<T>],
    x: ArrayView2<T>,
) -> Result<Vec<Array2<T>>> {
    members.par_iter().map(|w| predict(spec, w, x)).collect()
}

/// Test-time stochastic, posterior-mean and majority-vote ensemble predictors.
///
/// The stochastic predictor draws fresh weights for every test example. With
/// `shared_sample` it instead uses one draw for the whole set (ensemble member
/// zero), which is much faster but not what the reports use.
pub fn evaluate_predictors<T: Scalar>(
    net: &ProbNetwork<T>,
    test: &Dataset,
    ensemble_size: usize,
    cfg: &LossConfig,
    seed: u64,
    shared_sample: bool,
) -> Result<PredictorReport> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if ensemble_size == 0 {
        return Err(domain("ensemble_size must be at least 1"));
    }
    let n = test.len() as f64;
    let spec = &net.spec;
    let (deterministic_xe, deterministic_01) =
        fixed_weight_losses(spec, &net.posterior_means(), test, cfg)?;

    let (stochastic_xe, stochastic_01) = if shared_sample {
        let w = net.sample_weights(&mut rng::derive(seed, seed_domain::ENSEMBLE, 0));
        fixed_weight_losses(spec, &w, test, cfg)?
    } else {
        let per: Vec<(f64, usize)> = (0..test.len())
            .into_par_iter()
            .map(|i| {
                let w = net.sample_weights(&mut rng::derive(
                    seed,
                    seed_domain::STOCHASTIC_PRED,
                    i as u64,
                ));
                let (x, y) = test.batch::<T>(&[i]);
                Ok(batch_loss_sums(
                    predict(spec, &w, x.view())?.view(),
                    &y,
                    cfg,
                ))
            })
            .collect::<Result<_>>()?;
        let xe: f64 = per.iter().map(|p| p.0).sum();
        let e: usize = per.iter().map(|p| p.1).sum();
        (xe / n, e as f64 / n)
    };

    let members = member_weights(net, ensemble_size, seed);
    let k = spec.num_classes;
    let (mut ens_xe, mut ens_err) = (0.0, 0usize);
    let idx: Vec<usize> = (0..test.len()).collect();
    for (x, y) in chunked::<T>(test, &idx) {
        let outs = member_outputs(spec, &members, x.view())?;
        let votes: Vec<Vec<usize>> = outs
            .iter()
            .map(|o| o.axis_iter(Axis(0)).map(|r| argmax(&r.to_vec())).collect())
            .collect();
        let winner = majority(&votes, k);
        for (i, &label) in y.iter().enumerate() {
            let mut mean = vec![0.0; k];
            for o in &outs {
                for (a, p) in mean.iter_mut().zip(softmax(&o.row(i).to_vec())) {
                    *a += p / ensemble_size as f64;
                }
            }
            ens_xe += bounded_xe_from_probs(&mean, label, cfg);
            ens_err += usize::from(winner[i] != label);
        }
    }

    Ok(PredictorReport {
        stochastic_01,
        stochastic_xe,
        deterministic_01,
        deterministic_xe,
        ensemble_01: ens_err as f64 / n,
        ensemble_xe: ens_xe / n,
        ensemble_size,
    })
}

/// For each input row, how many ensemble members disagree with the majority vote.
pub fn ensemble_disagreement<T: Scalar>(
    net: &ProbNetwork<T>,
    inputs: ArrayView2<T>,
    ensemble_size: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if ensemble_size == 0 {
        return Err(domain("ensemble_size must be at least 1"));
    }
    let members = member_weights(net, ensemble_size, seed);
    let mut out = Vec::with_capacity(inputs.nrows());
    for start in (0..inputs.nrows()).step_by(EVAL_CHUNK) {
        let x = inputs.slice(ndarray::s![
            start..(start + EVAL_CHUNK).min(inputs.nrows()),
            ..
        ]);
        let outs = member_outputs(&net.spec, &members, x)?;
        let votes: Vec<Vec<usize>> = outs
            .iter()
            .map(|o| o.axis_iter(Axis(0)).map(|r| argmax(&r.to_vec())).collect())
            .collect();
        out.extend(disagreement_from_votes(&votes, net.spec.num_classes));
    }
    Ok(out)
}

/// Disagreement counts from explicit votes (members x examples).
pub fn disagreement_from_votes(votes: &[Vec<usize>], classes: usize) -> Vec<usize> {
    let winner = majority(votes, classes);
    winner
        .iter()
        .enumerate()
        .map(|(i, &w)| votes.iter().filter(|v| v[i] != w).count())
        .collect()
}
