//! Experiment harness for the stabmix integrators: convergence, stability,
//! stages-vs-error, space-time and q-order studies written as versioned CSV
//! tables with a JSON manifest per run.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod registry;
pub mod slope;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::{run, write_outputs, RunOutput};
pub use output::ExperimentRecord;
