//! Scenario files, pipelines and parameter sweeps.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::{ConfigError, Pipeline, ScenarioConfig};
pub use run::{run, RunError, RunOptions, RunOutcome};
pub use sweep::{sweep, SweepOutcome};
