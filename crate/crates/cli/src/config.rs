//! Run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use pbb_core::data::{load_cifar10_bin, load_mnist_idx, standardize, synthetic_blobs};
use pbb_core::{BoundBudget, Dataset, NetworkSpec, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs; the test set is drawn with `seed + 1`.
    Synthetic {
        n_train: usize,
        n_test: usize,
        k: usize,
        dims: usize,
        separation: f64,
        seed: u64,
        #[serde(default)]
        standardize: bool,
    },
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Cifar10 {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

impl DatasetConfig {
    /// Training and test sets, standardised with the training statistics.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test, standardise) = match self {
            DatasetConfig::Synthetic {
                n_train,
                n_test,
                k,
                dims,
                separation,
                seed,
                standardize,
            } => (
                synthetic_blobs(*n_train, *k, *dims, *separation, *seed)?,
                synthetic_blobs(*n_test, *k, *dims, *separation, seed.wrapping_add(1))?,
                *standardize,
            ),
            DatasetConfig::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                standardize,
            } => (
                load_mnist_idx(train_images, train_labels)?,
                load_mnist_idx(test_images, test_labels)?,
                *standardize,
            ),
            DatasetConfig::Cifar10 {
                train_batches,
                test_batches,
                standardize,
            } => (
                load_cifar10_bin(train_batches)?,
                load_cifar10_bin(test_batches)?,
                *standardize,
            ),
        };
        if standardise {
            standardize(&mut train, &mut [&mut test])?;
        }
        Ok((train, test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub delta: f64,
    pub delta_prime: f64,
    pub m: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            delta: 0.025,
            delta_prime: 0.01,
            m: 150_000,
        }
    }
}

impl BudgetConfig {
    pub fn budget(&self, n_bound: usize) -> Result<BoundBudget> {
        Ok(BoundBudget::new(
            self.delta,
            self.delta_prime,
            n_bound,
            self.m,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ensemble_size: usize,
    /// One weight draw for the whole test set instead of one per example.
    pub shared_stochastic_sample: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            shared_stochastic_sample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    pub objective: Variant,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Field-level checks that the core types leave to their callers.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: pbb_core::Error| CliError::Config(format!("{name}: {e}"));
        self.network.validate().map_err(|e| field("network", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        self.train
            .loss()
            .validate(self.network.num_classes)
            .map_err(|e| field("train.p_min", e))?;
        BoundBudget::new(
            self.budget.delta,
            self.budget.delta_prime,
            1,
            self.budget.m.max(1),
        )
        .map_err(|e| field("budget", e))?;
        pbb_core::ObjectiveKind::new(self.objective, self.budget.delta, 1)
            .map_err(|e| field("objective", e))?;
        if self.budget.m == 0 {
            return Err(CliError::Config("budget.m: must be at least 1".into()));
        }
        if self.eval.ensemble_size == 0 {
            return Err(CliError::Config(
                "eval.ensemble_size: must be at least 1".into(),
            ));
        }
        if let DatasetConfig::Synthetic {
            n_train,
            n_test,
            k,
            dims,
            ..
        } = self.dataset
        {
            if n_train == 0 || n_test == 0 || k == 0 || dims == 0 {
                return Err(CliError::Config(
                    "dataset: n_train, n_test, k and dims must be positive".into(),
                ));
            }
            if self.network.input_shape.iter().product::<usize>() != dims
                || self.network.num_classes != k
            {
                return Err(CliError::Config(
                    "network: input size and classes must match the dataset".into(),
                ));
            }
        }
        if self.train.seed > i64::MAX as u64 {
            return Err(CliError::Config(
                "train.seed: must fit in a signed 64-bit integer".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"
objective = { kind = "quad" }

[dataset]
kind = "synthetic"
n_train = 200
n_test = 100
k = 2
dims = 2
separation = 6.0
seed = 1

[network]
input_shape = [2]
num_classes = 2
layers = [
  { kind = "linear", in = 2, out = 8 },
  { kind = "relu" },
  { kind = "linear", in = 8, out = 2 },
]
"#;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::from_toml(TOY).unwrap();
        assert_eq!(
            cfg.budget,
            BudgetConfig {
                delta: 0.025,
                delta_prime: 0.01,
                m: 150_000
            }
        );
        assert_eq!(cfg.train.batch_size, 250);
        assert_eq!(cfg.train.epochs_posterior, 100);
        assert_eq!(cfg.train.p_min, 1e-5);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{TOY}\n[train]\nepochs = 3\n");
        assert!(matches!(
            RunConfig::from_toml(&bad),
            Err(CliError::Config(_))
        ));
        let bad = TOY.replace("seed = 1", "seed = 1\ncolour = 2");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn field_errors_name_the_field() {
        let bad = format!("{TOY}\n[budget]\ndelta = 1.5\n");
        let msg = RunConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("budget"), "{msg}");
    }
}
