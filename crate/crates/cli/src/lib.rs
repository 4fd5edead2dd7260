//! Command-line driver: dataset manifests, run configuration, the four
//! subcommands and their all-or-nothing output.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

pub use args::run_from;
pub use error::{CliError, Result};
