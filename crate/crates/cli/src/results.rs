//! Result records (JSON) and the grid CSV.

use std::path::Path;

use pbb_core::data::Standardization;
use pbb_core::{PredictorReport, PriorMode, RiskCertificate, TrainMetrics};
use serde::{Deserialize, Serialize};

use crate::config::Precision;
use crate::error::{CliError, Result};

/// The train, certificate and test columns of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Columns {
    pub cert_xe: Option<f64>,
    pub cert_01: Option<f64>,
    pub kl_n: Option<f64>,
    pub train_xe: Option<f64>,
    pub train_01: Option<f64>,
    pub stch_xe: Option<f64>,
    pub stch_01: Option<f64>,
    pub det_xe: Option<f64>,
    pub det_01: Option<f64>,
    pub ens_xe: Option<f64>,
    pub ens_01: Option<f64>,
    pub prior_01: Option<f64>,
}

pub const COLUMN_NAMES: [&str; 12] = [
    "cert_xe", "cert_01", "kl_n", "train_xe", "train_01", "stch_xe", "stch_01", "det_xe", "det_01",
    "ens_xe", "ens_01", "prior_01",
];

impl Columns {
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            self.cert_xe,
            self.cert_01,
            self.kl_n,
            self.train_xe,
            self.train_01,
            self.stch_xe,
            self.stch_01,
            self.det_xe,
            self.det_01,
            self.ens_xe,
            self.ens_01,
            self.prior_01,
        ]
    }

    pub fn fill_train(&mut self, m: &TrainMetrics) {
        self.kl_n = Some(m.kl_n);
        self.train_xe = Some(m.train_xe);
        self.train_01 = Some(m.train_01);
    }

    pub fn fill_certificates(&mut self, zero_one: &RiskCertificate, xe: &RiskCertificate) {
        self.cert_01 = Some(zero_one.cert_value);
        self.cert_xe = Some(xe.cert_value);
    }

    pub fn fill_predictors(&mut self, p: &PredictorReport) {
        self.stch_xe = Some(p.stochastic_xe);
        self.stch_01 = Some(p.stochastic_01);
        self.det_xe = Some(p.deterministic_xe);
        self.det_01 = Some(p.deterministic_01);
        self.ens_xe = Some(p.ensemble_xe);
        self.ens_01 = Some(p.ensemble_01);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub config_digest: String,
    pub objective: String,
    pub prior_mode: PriorMode,
    pub precision: Precision,
    pub seed: u64,
    /// Seed of the Monte-Carlo certificate samples.
    pub mc_seed: u64,
    pub n_total: usize,
    pub n_bound: usize,
    /// Which examples back the certificate.
    pub n_bound_rule: String,
    pub columns: Columns,
    pub train: Option<TrainMetrics>,
    pub cert_01: Option<RiskCertificate>,
    pub cert_xe: Option<RiskCertificate>,
    pub predictors: Option<PredictorReport>,
    pub standardization: Option<Standardization>,
    pub wall_clock_s: f64,
}

impl ResultRecord {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn n_bound_rule(mode: PriorMode) -> &'static str {
    match mode {
        PriorMode::Learnt => "held-out examples not seen by the prior",
        PriorMode::Random => "all training examples (data-free prior)",
    }
}

/// Shortest round-trip decimal, `.` separator, empty for missing values.
pub fn format_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names_are_unique() {
        let mut names = COLUMN_NAMES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), COLUMN_NAMES.len());
    }

    #[test]
    fn values_are_locale_free() {
        assert_eq!(format_value(Some(0.0279)), "0.0279");
        assert_eq!(format_value(Some(1.0)), "1.0");
        assert_eq!(format_value(None), "");
    }
}
