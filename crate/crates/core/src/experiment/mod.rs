//! Named, reproducible experiments: configuration, seed fan-out, CSV trace
//! emission, and the report that evaluates the directional claims.

pub mod config;
pub mod report;
pub mod runner;
pub mod trace;

pub use config::{ExperimentConfig, ExperimentKind, ALL_EXPERIMENTS};
pub use report::{evaluate, load_traces, CriterionOutcome, CriterionStatus, Report};
pub use runner::{run, run_single_seed, RunOutcome};
pub use trace::{TraceFile, TRACE_SCHEMA_VERSION};

use crate::deep_linear::DeepLinearError;
use crate::gridworld::GridworldError;
use crate::kernel::KernelError;
use crate::linalg::LinalgError;
use crate::neural::NeuralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("trace schema version {found}, this build reads {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("all seeds diverged")]
    AllSeedsDiverged,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    DeepLinear(#[from] DeepLinearError),
    #[error(transparent)]
    Gridworld(#[from] GridworldError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
