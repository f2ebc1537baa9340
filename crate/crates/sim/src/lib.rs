//! Deterministic scenario runner and benchmark harness for the trust
//! service.
//!
//! * [`scenario`]: scenario files (fleet, seeded history, task batch).
//! * [`fleet`]: the heterogeneous fleet template behind the benchmark matrix.
//! * [`strategy`]: TaaS and the two baseline selection strategies.
//! * [`runner`]: discrete-event execution of one scenario.
//! * [`metrics`]: success rate, device utilization, completion times.
//! * [`trace`]: the raw event trace and an independent reducer over it.
//! * [`matrix`]: cells × strategies × seeds, results table and aggregates.

pub mod fleet;
pub mod matrix;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod strategy;
pub mod trace;

use thiserror::Error;

pub use fleet::{Cell, FleetTemplate, Role};
pub use matrix::{aggregate, run_matrix, write_outputs, Aggregate, MatrixConfig, Row};
pub use metrics::{BoxSummary, RunMetrics, TaskOutcome};
pub use runner::{run, run_with, RunOutput, Selector};
pub use scenario::{HistorySpec, Scenario, TaskArrival};
pub use strategy::{baseline_random, baseline_reputation, BaselineError, Strategy};
pub use trace::{reduce, utilization_from_trace, TraceEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Deployment(#[from] taas_core::deployment::DeploymentError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("no progress by virtual time {0}")]
    Stalled(f64),
}
