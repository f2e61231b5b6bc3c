//! Driver for market-definition sensitivity analysis over store data.
//!
//! Reads a store CSV and a JSON run configuration, runs the state-level,
//! firm-level or local-market analysis, and writes CSV/JSON/DOT reports.

pub mod app;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod report;

pub use error::{CliError, Result};
