//! Config-driven runs of the bsde-core solvers: TOML configuration, JSON
//! reports, per-knot CSV export and ensemble caching.

pub mod config;
pub mod csv;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{run, run_config, Command, RunOutput, RunReport};
