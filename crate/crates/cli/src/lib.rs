//! Configuration and execution for the `simplex-reduction` command-line tool.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Format, Mode, Overrides};
pub use run::{execute, resolve, RunSummary, Status};
