//! Run configuration, checkpoints, result records and the commands behind the
//! `pbb` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod results;

pub use checkpoint::{AnyNetwork, Checkpoint, CheckpointMeta};
pub use commands::{
    cmd_certify, cmd_evaluate, cmd_train, EvaluationReport, Overrides, TrainOutcome,
};
pub use config::{Precision, RunConfig};
pub use error::{CliError, Result};
pub use grid::{cmd_grid_search, GridAxes, GridConfig};
pub use results::ResultRecord;
