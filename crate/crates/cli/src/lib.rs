//! Command-line front end: ingestion, configuration and the `fit`,
//! `simulate` and `summarize` subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
