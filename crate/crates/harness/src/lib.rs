//! Scenario runner, reports, and the `nfchain` command line.

pub mod bottleneck;
pub mod builtin;
pub mod cli;
pub mod report;
pub mod scenario;
pub mod threaded;

use nfchain_core::sim::{self, RunOutcome, SimError};
use thiserror::Error;

pub use bottleneck::{run_controller_bottleneck, BottleneckConfig, BottleneckPoint};
pub use report::MetricsReport;
pub use scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid deployment: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invariant violated: {}", .0.join("; "))]
    Invariant(Vec<String>),
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Runtime(String),
}

/// Validates and simulates `sc`. A run that breaks an invariant is an
/// error carrying every violation.
pub fn run_scenario(sc: &Scenario) -> Result<(MetricsReport, RunOutcome), HarnessError> {
    sc.validate()?;
    let out = sim::run(sc.sim_config())?;
    if !out.violations.is_empty() {
        return Err(HarnessError::Invariant(out.violations));
    }
    Ok((MetricsReport::from_outcome(&out), out))
}
