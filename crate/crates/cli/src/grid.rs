//! Certificate-driven grid search over training hyperparameters.

use std::path::{Path, PathBuf};

use pbb_core::rng::{self, domain};
use pbb_core::{union_bound_correction, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{cmd_train, TrainOutcome};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::results::{format_value, Columns, COLUMN_NAMES};

/// Values to sweep; an empty list keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub sigma0: Vec<f64>,
    pub dropout_p: Vec<f64>,
    pub prior_lr: Vec<f64>,
    pub prior_momentum: Vec<f64>,
    pub posterior_lr: Vec<f64>,
    pub posterior_momentum: Vec<f64>,
    pub objective: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Run config path, relative to the grid file.
    pub base: PathBuf,
    #[serde(default)]
    pub grid: GridAxes,
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<(Self, RunConfig)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let grid: GridConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let base_path = path.parent().unwrap_or(Path::new(".")).join(&grid.base);
        let base = RunConfig::load(&base_path)?;
        Ok((grid, base))
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Every combination, in a fixed nested order, with a per-run seed.
pub fn expand(axes: &GridAxes, base: &RunConfig) -> Vec<RunConfig> {
    let t = &base.train;
    let mut out = Vec::new();
    for objective in axis(&axes.objective, base.objective) {
        for sigma0 in axis(&axes.sigma0, t.sigma0) {
            for dropout_p in axis(
                &axes.dropout_p.iter().map(|&p| Some(p)).collect::<Vec<_>>(),
                t.dropout_p,
            ) {
                for prior_lr in axis(&axes.prior_lr, t.prior_lr) {
                    for prior_momentum in axis(&axes.prior_momentum, t.prior_momentum) {
                        for posterior_lr in axis(&axes.posterior_lr, t.posterior_lr) {
                            for posterior_momentum in
                                axis(&axes.posterior_momentum, t.posterior_momentum)
                            {
                                let mut c = base.clone();
                                c.objective = objective;
                                c.train.sigma0 = sigma0;
                                c.train.dropout_p = dropout_p;
                                c.train.prior_lr = prior_lr;
                                c.train.prior_momentum = prior_momentum;
                                c.train.posterior_lr = posterior_lr;
                                c.train.posterior_momentum = posterior_momentum;
                                let index = out.len() as u64;
                                c.train.seed = rng::derive_seed(t.seed, domain::GRID, index) >> 1;
                                c.output.run_id = Some(format!("run{index:04}"));
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub rank: Option<usize>,
    pub run_id: String,
    pub status: String,
    pub config: RunConfig,
    pub columns: Columns,
    pub n_bound: Option<usize>,
    pub union_correction: Option<f64>,
    pub wall_clock_s: Option<f64>,
}

pub const GRID_FILE: &str = "grid.csv";

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "rank",
        "run_id",
        "status",
        "objective",
        "seed",
        "sigma0",
        "dropout_p",
        "prior_lr",
        "prior_momentum",
        "posterior_lr",
        "posterior_momentum",
    ]
    .map(String::from)
    .to_vec();
    h.extend(COLUMN_NAMES.iter().map(|s| s.to_string()));
    h.extend(["n_bound", "union_correction", "wall_clock_s"].map(String::from));
    h
}

fn csv_record(r: &GridRow) -> Vec<String> {
    let t = &r.config.train;
    let mut v = vec![
        r.rank.map(|x| x.to_string()).unwrap_or_default(),
        r.run_id.clone(),
        r.status.clone(),
        r.config.objective.name().to_string(),
        t.seed.to_string(),
        format_value(Some(t.sigma0)),
        format_value(t.dropout_p),
        format_value(Some(t.prior_lr)),
        format_value(Some(t.prior_momentum)),
        format_value(Some(t.posterior_lr)),
        format_value(Some(t.posterior_momentum)),
    ];
    v.extend(r.columns.values().iter().map(|&x| format_value(x)));
    v.push(r.n_bound.map(|x| x.to_string()).unwrap_or_default());
    v.push(format_value(r.union_correction));
    v.push(format_value(r.wall_clock_s));
    v
}

/// Runs every grid point (in parallel), ranks successful runs by the 0-1
/// certificate, and writes `grid.csv` plus one result file per run.
/// Failed runs are kept as unranked rows at the end.
pub fn cmd_grid_search(axes: &GridAxes, base: &RunConfig, out: &Path) -> Result<Vec<GridRow>> {
    let runs = expand(axes, base);
    let c = runs.len();
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| CliError::io(&runs_dir, e))?;
    let outcomes: Vec<(RunConfig, Result<TrainOutcome>)> = runs
        .into_par_iter()
        .map(|cfg| {
            let r = cmd_train(&cfg);
            (cfg, r)
        })
        .collect();
    let mut rows = Vec::with_capacity(c);
    for (cfg, outcome) in outcomes {
        let run_id = cfg.output.run_id.clone().unwrap_or_default();
        let row = match outcome {
            Ok(o) => {
                o.write(&runs_dir.join(&run_id))?;
                let r = &o.record;
                GridRow {
                    rank: None,
                    run_id,
                    status: "ok".into(),
                    config: cfg,
                    columns: r.columns,
                    n_bound: Some(r.n_bound),
                    union_correction: Some(union_bound_correction(c, r.n_bound)),
                    wall_clock_s: Some(r.wall_clock_s),
                }
            }
            Err(e) => GridRow {
                rank: None,
                run_id,
                status: format!("failed: {e}"),
                config: cfg,
                columns: Columns::default(),
                n_bound: None,
                union_correction: None,
                wall_clock_s: None,
            },
        };
        rows.push(row);
    }
    // stable sort keeps grid order among equal certificates
    rows.sort_by(|a, b| {
        let key = |r: &GridRow| r.columns.cert_01.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    let mut rank = 0;
    for r in rows.iter_mut().filter(|r| r.columns.cert_01.is_some()) {
        rank += 1;
        r.rank = Some(rank);
    }
    let path = out.join(GRID_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(csv_header())?;
    for r in &rows {
        w.write_record(csv_record(r))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}
