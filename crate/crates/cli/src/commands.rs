//! The train, certify and evaluate commands.

use std::path::Path;
use std::time::Instant;

use pbb_core::certification::{
    certify_both, ensemble_disagreement, evaluate_predictors, fixed_weight_losses,
};
use pbb_core::trainer::train_erm_baseline;
use pbb_core::{
    make_split, train_posterior, train_prior, Dataset, DiagDist, ObjectiveKind, PredictorReport,
    ProbNetwork, Scalar, SplitPlan, TrainMetrics, Variant,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{dataset_digest, split_digest, AnyNetwork, Checkpoint, CheckpointMeta};
use crate::config::{Precision, RunConfig};
use crate::error::{CliError, Result};
use crate::results::{n_bound_rule, Columns, ResultRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.pbb";
pub const RESULT_FILE: &str = "result.json";

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub m: Option<usize>,
    pub delta: Option<f64>,
    pub delta_prime: Option<f64>,
    pub precision: Option<Precision>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(m) = self.m {
            cfg.budget.m = m;
        }
        if let Some(d) = self.delta {
            cfg.budget.delta = d;
        }
        if let Some(d) = self.delta_prime {
            cfg.budget.delta_prime = d;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        cfg.validate()
    }
}

trait Wrap: Scalar {
    fn wrap(net: ProbNetwork<Self>) -> AnyNetwork;
}

impl Wrap for f32 {
    fn wrap(net: ProbNetwork<Self>) -> AnyNetwork {
        AnyNetwork::Single(net)
    }
}

impl Wrap for f64 {
    fn wrap(net: ProbNetwork<Self>) -> AnyNetwork {
        AnyNetwork::Double(net)
    }
}

pub fn config_digest(cfg: &RunConfig) -> Result<String> {
    let text = cfg.to_toml()?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn run_id(cfg: &RunConfig, digest: &str) -> String {
    cfg.output
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.objective.name(), &digest[..12]))
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub record: ResultRecord,
}

impl TrainOutcome {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        self.checkpoint.write(&dir.join(CHECKPOINT_FILE))?;
        self.record.write_json(&dir.join(RESULT_FILE))
    }
}

struct Trained {
    network: AnyNetwork,
    metrics: Option<TrainMetrics>,
    lambda: Option<f64>,
    columns: Columns,
    cert: Option<(pbb_core::RiskCertificate, pbb_core::RiskCertificate)>,
    predictors: Option<PredictorReport>,
    n_bound: usize,
}

fn train_generic<T: Wrap>(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    split: &SplitPlan,
) -> Result<Trained> {
    let tc = &cfg.train;
    let loss = tc.loss();
    let mode = tc.prior_mode;
    let mut columns = Columns::default();

    if let Variant::Erm = cfg.objective {
        // deterministic baseline: no prior, no certificate
        let w = train_erm_baseline::<T>(&cfg.network, tc, train)?;
        let (xe, zo) = fixed_weight_losses(&cfg.network, &w, train, &loss)?;
        columns.train_xe = Some(xe);
        columns.train_01 = Some(zo);
        let (xe, zo) = fixed_weight_losses(&cfg.network, &w, test, &loss)?;
        columns.det_xe = Some(xe);
        columns.det_01 = Some(zo);
        let dists = cfg
            .network
            .tensors()
            .iter()
            .map(|t| DiagDist::with_scale(tc.family, w[t.range()].to_vec(), tc.sigma0))
            .collect();
        let net = ProbNetwork::from_prior(cfg.network.clone(), dists)?;
        return Ok(Trained {
            network: T::wrap(net),
            metrics: None,
            lambda: None,
            columns,
            cert: None,
            predictors: None,
            n_bound: split.bound_indices(mode).len(),
        });
    }

    let prior = train_prior::<T>(&cfg.network, split, tc, train)?;
    let mut net = ProbNetwork::from_prior(cfg.network.clone(), prior)?;
    columns.prior_01 = Some(fixed_weight_losses(&net.spec, &net.prior_means(), test, &loss)?.1);
    let mut kind = ObjectiveKind::new(cfg.objective, cfg.budget.delta, split.n_total)?;
    let metrics = train_posterior(&mut net, &mut kind, split, tc, train)?;
    columns.fill_train(&metrics);
    let n_bound = split.bound_indices(mode).len();
    let budget = cfg.budget.budget(n_bound)?;
    let cert = certify_both(&net, split, mode, train, &budget, &loss, tc.seed)?;
    columns.fill_certificates(&cert.0, &cert.1);
    let predictors = evaluate_predictors(
        &net,
        test,
        cfg.eval.ensemble_size,
        &loss,
        tc.seed,
        cfg.eval.shared_stochastic_sample,
    )?;
    columns.fill_predictors(&predictors);
    Ok(Trained {
        network: T::wrap(net),
        metrics: Some(metrics),
        lambda: kind.lambda(),
        columns,
        cert: Some(cert),
        predictors: Some(predictors),
        n_bound,
    })
}

/// Split, prior, posterior, certificates and test predictors for one config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let (train, test) = cfg.dataset.load()?;
    if train.k != cfg.network.num_classes || train.features.ncols() != cfg.network.input_len() {
        return Err(CliError::Config(
            "network: input size and classes must match the dataset".into(),
        ));
    }
    let split = make_split(train.len(), cfg.train.prior_fraction, cfg.train.seed)?;
    let t = match cfg.precision {
        Precision::Single => train_generic::<f32>(cfg, &train, &test, &split)?,
        Precision::Double => train_generic::<f64>(cfg, &train, &test, &split)?,
    };
    let digest = config_digest(cfg)?;
    let meta = CheckpointMeta {
        spec: cfg.network.clone(),
        family: cfg.train.family,
        lambda: t.lambda,
        seed: cfg.train.seed,
        split_digest: split_digest(&split),
        dataset_digest: dataset_digest(&train),
        precision: cfg.precision,
        train: t.metrics,
        prior_01: t.columns.prior_01,
        config: cfg.clone(),
    };
    let record = ResultRecord {
        run_id: run_id(cfg, &digest),
        config_digest: digest,
        objective: cfg.objective.name().into(),
        prior_mode: cfg.train.prior_mode,
        precision: cfg.precision,
        seed: cfg.train.seed,
        mc_seed: cfg.train.seed,
        n_total: split.n_total,
        n_bound: t.n_bound,
        n_bound_rule: n_bound_rule(cfg.train.prior_mode).into(),
        columns: t.columns,
        train: t.metrics,
        cert_01: t.cert.map(|c| c.0),
        cert_xe: t.cert.map(|c| c.1),
        predictors: t.predictors,
        standardization: train.standardization.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            meta,
            network: t.network,
        },
        record,
    })
}

/// Recomputes both certificates from a checkpoint without retraining.
///
/// The split is rebuilt from the stored seed and refused unless its digest
/// and the training data's digest match the checkpoint.
pub fn cmd_certify(ckpt: &Checkpoint, overrides: &Overrides) -> Result<ResultRecord> {
    let start = Instant::now();
    let meta = &ckpt.meta;
    if let Variant::Erm = meta.config.objective {
        return Err(CliError::Config(
            "an ERM baseline has no certificate: its prior saw all of the data".into(),
        ));
    }
    let mut cfg = meta.config.clone();
    let budget_overrides = Overrides {
        seed: None,
        precision: None,
        ..*overrides
    };
    budget_overrides.apply(&mut cfg)?;
    let mc_seed = overrides.seed.unwrap_or(meta.seed);
    let (train, _) = cfg.dataset.load()?;
    let actual = dataset_digest(&train);
    if actual != meta.dataset_digest {
        return Err(CliError::DigestMismatch {
            what: "dataset",
            stored: meta.dataset_digest.clone(),
            actual,
        });
    }
    let split = make_split(train.len(), cfg.train.prior_fraction, meta.seed)?;
    let actual = split_digest(&split);
    if actual != meta.split_digest {
        return Err(CliError::DigestMismatch {
            what: "split",
            stored: meta.split_digest.clone(),
            actual,
        });
    }
    let mode = cfg.train.prior_mode;
    let n_bound = split.bound_indices(mode).len();
    let budget = cfg.budget.budget(n_bound)?;
    let loss = cfg.train.loss();
    let (zo, xe) = match &ckpt.network {
        AnyNetwork::Single(n) => certify_both(n, &split, mode, &train, &budget, &loss, mc_seed)?,
        AnyNetwork::Double(n) => certify_both(n, &split, mode, &train, &budget, &loss, mc_seed)?,
    };
    let mut columns = Columns {
        prior_01: meta.prior_01,
        ..Columns::default()
    };
    if let Some(m) = &meta.train {
        columns.fill_train(m);
    }
    columns.fill_certificates(&zo, &xe);
    let digest = config_digest(&cfg)?;
    Ok(ResultRecord {
        run_id: run_id(&meta.config, &config_digest(&meta.config)?),
        config_digest: digest,
        objective: cfg.objective.name().into(),
        prior_mode: mode,
        precision: meta.precision,
        seed: meta.seed,
        mc_seed,
        n_total: split.n_total,
        n_bound,
        n_bound_rule: n_bound_rule(mode).into(),
        columns,
        train: meta.train,
        cert_01: Some(zo),
        cert_xe: Some(xe),
        predictors: None,
        standardization: train.standardization.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleHistogram {
    pub layer: usize,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// `bins + 1` edges; a single degenerate bin when every scale is equal.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of `values`.
pub fn histogram(layer: usize, values: &[f64], bins: usize) -> ScaleHistogram {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || min == max || bins == 0 {
        let (min, max) = if values.is_empty() {
            (0.0, 0.0)
        } else {
            (min, max)
        };
        return ScaleHistogram {
            layer,
            count: values.len(),
            min,
            max,
            edges: vec![min, max],
            counts: vec![values.len()],
        };
    }
    let width = (max - min) / bins as f64;
    let edges = (0..=bins)
        .map(|i| {
            if i == bins {
                max
            } else {
                min + i as f64 * width
            }
        })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        counts[(((v - min) / width) as usize).min(bins - 1)] += 1;
    }
    ScaleHistogram {
        layer,
        count: values.len(),
        min,
        max,
        edges,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub predictors: PredictorReport,
    pub disagreement: Vec<usize>,
    /// Test indices by decreasing disagreement, lowest index first on ties.
    pub most_uncertain: Vec<usize>,
    /// Test indices by increasing disagreement, lowest index first on ties.
    pub least_uncertain: Vec<usize>,
    pub scale_histograms: Vec<ScaleHistogram>,
}

pub const HISTOGRAM_BINS: usize = 50;

/// Indices ordered by disagreement, truncated to `k`.
pub fn top_k(disagreement: &[usize], k: usize, most: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..disagreement.len()).collect();
    if most {
        idx.sort_by_key(|&i| (std::cmp::Reverse(disagreement[i]), i));
    } else {
        idx.sort_by_key(|&i| (disagreement[i], i));
    }
    idx.truncate(k);
    idx
}

fn evaluate_generic<T: Scalar>(
    net: &ProbNetwork<T>,
    cfg: &RunConfig,
    test: &Dataset,
    ensemble_size: usize,
    top: usize,
    run_id: String,
) -> Result<EvaluationReport> {
    let loss = cfg.train.loss();
    let seed = cfg.train.seed;
    let predictors = evaluate_predictors(
        net,
        test,
        ensemble_size,
        &loss,
        seed,
        cfg.eval.shared_stochastic_sample,
    )?;
    let idx: Vec<usize> = (0..test.len()).collect();
    let (x, _) = test.batch::<T>(&idx);
    let disagreement = ensemble_disagreement(net, x.view(), ensemble_size, seed)?;
    let mut per_layer: Vec<(usize, Vec<f64>)> = Vec::new();
    for (t, q) in net.spec.tensors().iter().zip(&net.posterior) {
        match per_layer.last_mut() {
            Some((layer, v)) if *layer == t.layer => v.extend(q.sigma()),
            _ => per_layer.push((t.layer, q.sigma().collect())),
        }
    }
    Ok(EvaluationReport {
        run_id,
        predictors,
        most_uncertain: top_k(&disagreement, top, true),
        least_uncertain: top_k(&disagreement, top, false),
        disagreement,
        scale_histograms: per_layer
            .iter()
            .map(|(l, v)| histogram(*l, v, HISTOGRAM_BINS))
            .collect(),
    })
}

/// Test predictors, ensemble disagreement and per-layer posterior scale histograms.
pub fn cmd_evaluate(
    ckpt: &Checkpoint,
    ensemble_size: Option<usize>,
    top: usize,
) -> Result<EvaluationReport> {
    let cfg = &ckpt.meta.config;
    let (_, test) = cfg.dataset.load()?;
    let e = ensemble_size.unwrap_or(cfg.eval.ensemble_size);
    let id = run_id(cfg, &config_digest(cfg)?);
    match &ckpt.network {
        AnyNetwork::Single(n) => evaluate_generic(n, cfg, &test, e, top, id),
        AnyNetwork::Double(n) => evaluate_generic(n, cfg, &test, e, top, id),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_sum_to_len() {
        let v: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let h = histogram(0, &v, 10);
        assert_eq!(h.counts.iter().sum::<usize>(), 101);
        assert_eq!(h.edges.len(), 11);
        let flat = histogram(1, &[0.03; 7], 10);
        assert_eq!(
            (flat.min, flat.max, flat.counts.clone()),
            (0.03, 0.03, vec![7])
        );
    }

    #[test]
    fn top_k_orders_and_saturates() {
        let d = [0, 3, 1, 3];
        assert_eq!(top_k(&d, 2, true), vec![1, 3]);
        assert_eq!(top_k(&d, 2, false), vec![0, 2]);
        assert_eq!(top_k(&d, 10, true), vec![1, 3, 2, 0]);
    }
}
