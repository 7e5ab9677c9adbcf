//! Command-line driver: configuration, subcommands and artifact output.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Overrides, Provenance, RunConfig};
pub use error::{CliError, CliResult};
