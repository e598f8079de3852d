//! Batch front-end for the `youngfem` solver: configuration files, experiment
//! orchestration and artifact export.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_check, cmd_ensemble, cmd_export, cmd_run, cmd_study, CheckRequest, Outcome,
};
pub use config::{Overrides, RunConfig};
pub use error::{exit, CliError, CliResult};
