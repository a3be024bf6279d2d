//! Batch front end for the Schrödinger bridge solvers: configuration files,
//! run orchestration and on-disk formats.

pub mod config;
pub mod formats;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{execute, run, RunError};
