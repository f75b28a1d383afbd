//! Command-line front end: configuration, artifact writers and the
//! subcommands behind the `optex` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Outcome, SimulateOptions, SweepParam};
pub use config::{Format, Overrides, RunConfig};
pub use error::CliError;
