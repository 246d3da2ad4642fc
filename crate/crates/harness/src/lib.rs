//! Experiment orchestration for `sgdm-core`: configuration, deterministic
//! parallel sweeps, CSV persistence, SVG figures and the `sgdm-lab` CLI.

pub mod config;
pub mod error;
pub mod experiments;
pub mod plot;
pub mod sweep;
pub mod table;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, Outcome, RunOptions, RunRecord};
