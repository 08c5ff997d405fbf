//! Command-line front end: CSV ingestion, run configuration, JSON reports,
//! simulation metrics and SVG figures.

pub mod config;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod study;
pub mod svg;

pub use error::{CliError, CliResult};
