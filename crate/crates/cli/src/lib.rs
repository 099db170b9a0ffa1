//! Command-line front end: TOML run configs, subcommands and report files.

pub mod config;
pub mod error;
pub mod fields;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{execute, run, Command, Outcome, Report};
