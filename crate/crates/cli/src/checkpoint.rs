//! Versioned binary checkpoints.
//!
//! Layout: the magic `PBBCKPT`, a little-endian `u32` version, one byte with
//! the float width (4 or 8), a `u64` metadata length, the TOML metadata, and
//! then the little-endian float arrays: `mu` and `rho` of every prior tensor
//! in network order, followed by the same for the posterior.

use std::path::Path;

use pbb_core::{DiagDist, Family, NetworkSpec, ProbNetwork, Scalar, SplitPlan, TrainMetrics};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Precision, RunConfig};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 7] = b"PBBCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub spec: NetworkSpec,
    pub family: Family,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub split_digest: String,
    pub dataset_digest: String,
    pub precision: Precision,
    pub train: Option<TrainMetrics>,
    pub prior_01: Option<f64>,
    pub config: RunConfig,
}

/// A network in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyNetwork {
    Single(ProbNetwork<f32>),
    Double(ProbNetwork<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: AnyNetwork,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the prior and certificate index sets.
pub fn split_digest(split: &SplitPlan) -> String {
    let mut h = Sha256::new();
    h.update((split.n_total as u64).to_le_bytes());
    for set in [&split.prior_indices, &split.cert_indices] {
        h.update((set.len() as u64).to_le_bytes());
        for &i in set {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// SHA-256 over a dataset's shape, features and labels.
pub fn dataset_digest(data: &pbb_core::Dataset) -> String {
    let mut h = Sha256::new();
    for &d in &data.sample_shape {
        h.update((d as u64).to_le_bytes());
    }
    h.update((data.k as u64).to_le_bytes());
    for v in data.features.iter() {
        h.update(v.to_le_bytes());
    }
    for &l in &data.labels {
        h.update((l as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

fn write_dists<T: Scalar>(dists: &[DiagDist<T>], out: &mut Vec<u8>) {
    for d in dists {
        d.mu.iter().chain(&d.rho).for_each(|v| v.write_le(out));
    }
}

fn read_dists<T: Scalar>(
    spec: &NetworkSpec,
    family: Family,
    bytes: &[u8],
    at: &mut usize,
) -> Result<Vec<DiagDist<T>>> {
    let mut out = Vec::new();
    for t in spec.tensors() {
        let mut take = || -> Result<Vec<T>> {
            let end = *at + t.len * T::BYTES;
            let chunk = bytes
                .get(*at..end)
                .ok_or_else(|| CliError::Checkpoint("array data is truncated".into()))?;
            *at = end;
            Ok(chunk.chunks_exact(T::BYTES).map(T::read_le).collect())
        };
        let mu = take()?;
        let rho = take()?;
        out.push(DiagDist::new(family, mu, rho)?);
    }
    Ok(out)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = toml::to_string(&self.meta).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let width = match &self.network {
            AnyNetwork::Single(_) => 4u8,
            AnyNetwork::Double(_) => 8u8,
        };
        out.push(width);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        match &self.network {
            AnyNetwork::Single(n) => {
                write_dists(&n.prior, &mut out);
                write_dists(&n.posterior, &mut out);
            }
            AnyNetwork::Double(n) => {
                write_dists(&n.prior, &mut out);
                write_dists(&n.posterior, &mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || CliError::Checkpoint("header is truncated".into());
        if bytes.get(..7) != Some(MAGIC.as_slice()) {
            return Err(CliError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes.get(7..11).ok_or_else(short)?.try_into().unwrap());
        if version != VERSION {
            return Err(CliError::Version {
                expected: VERSION,
                found: version,
            });
        }
        let width = *bytes.get(11).ok_or_else(short)?;
        let meta_len =
            u64::from_le_bytes(bytes.get(12..20).ok_or_else(short)?.try_into().unwrap()) as usize;
        let meta_bytes = bytes
            .get(20..20usize.saturating_add(meta_len))
            .ok_or_else(short)?;
        let meta_text =
            std::str::from_utf8(meta_bytes).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let meta: CheckpointMeta =
            toml::from_str(meta_text).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let mut at = 20 + meta_len;
        let network = match (width, meta.precision) {
            (4, Precision::Single) => {
                let prior = read_dists::<f32>(&meta.spec, meta.family, bytes, &mut at)?;
                let posterior = read_dists::<f32>(&meta.spec, meta.family, bytes, &mut at)?;
                AnyNetwork::Single(ProbNetwork::new(meta.spec.clone(), prior, posterior)?)
            }
            (8, Precision::Double) => {
                let prior = read_dists::<f64>(&meta.spec, meta.family, bytes, &mut at)?;
                let posterior = read_dists::<f64>(&meta.spec, meta.family, bytes, &mut at)?;
                AnyNetwork::Double(ProbNetwork::new(meta.spec.clone(), prior, posterior)?)
            }
            _ => {
                return Err(CliError::Checkpoint(format!(
                    "float width {width} does not match {:?}",
                    meta.precision
                )))
            }
        };
        if at != bytes.len() {
            return Err(CliError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - at
            )));
        }
        Ok(Self { meta, network })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
    }
}
