//! PAC-Bayes training of probabilistic neural networks and numerical risk
//! certificates for the resulting stochastic predictors.
//!
//! Networks are generic over [`Scalar`] (`f32` or `f64`); every bound and KL
//! computation runs in `f64` regardless.

pub mod bounds;
pub mod certification;
pub mod data;
pub mod distributions;
pub mod error;
pub mod network;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use bounds::{
    binary_kl, bound_classic, bound_lambda, bound_quad, final_certificate, kl_inversion,
    mc_loss_upper, objective_bbb, union_bound_correction, BoundBudget, PenTerm,
};
pub use certification::{
    certify, certify_both, ensemble_disagreement, evaluate_predictors, mc_estimate, LossKind,
    PredictorReport, RiskCertificate,
};
pub use data::{DataError, Dataset};
pub use distributions::{DiagDist, Family, NoiseRecord};
pub use error::{Error, Result};
pub use network::ProbNetwork;
pub use nn::{LayerSpec, LossConfig, NetworkSpec};
pub use objectives::{ObjectiveKind, Variant};
pub use scalar::Scalar;
pub use trainer::{
    make_split, train_posterior, train_prior, OptimizerState, PriorMode, SplitPlan, TrainConfig,
    TrainMetrics,
};

pub type ProbNetworkF32 = ProbNetwork<f32>;
pub type ProbNetworkF64 = ProbNetwork<f64>;
pub type DiagDistF32 = DiagDist<f32>;
pub type DiagDistF64 = DiagDist<f64>;
