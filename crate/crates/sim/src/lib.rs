//! Scenario runner: parses a scenario, solves every vehicle in FIFO order, audits the
//! results and writes CSV/text reports.

pub mod output;
pub mod runner;
pub mod scenario;

use cav_core::coordinator::CoordinatorError;
use cav_core::ModelError;
use thiserror::Error;

pub use runner::{oracle_comparison, run, RunResult, VehicleOutcome, VehicleStatus};
pub use scenario::{RunOptions, Scenario, FIXTURES, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

/// Process exit code: everything solved and audited clean.
pub const EXIT_OK: i32 = 0;
/// Bad input or failed output.
pub const EXIT_INPUT: i32 = 1;
/// Some vehicle infeasible, or an audit / safety check failed.
pub const EXIT_FAILED: i32 = 2;
