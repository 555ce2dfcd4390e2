//! Command-line front end: configuration, CSV ingestion, result files and
//! the `fit`, `simulate`, `study` and `check` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;

pub use config::FitConfig;
pub use error::{CliError, CliResult};
pub use ingest::{ingest_csv, IngestError};
