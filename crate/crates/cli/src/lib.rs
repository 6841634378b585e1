//! Data ingestion, pipeline orchestration and report emission for `taildep`.
//!
//! The pipeline fits an AR(1)-GARCH(1,1) filter to each return series on the
//! training rows, fits a dependence model to the filtered residuals, and
//! backtests every pair of series on the test rows with the two-dimensional
//! Kupiec coverage test.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod panel;
pub mod pipeline;
pub mod synth;

pub use commands::run_pipeline;
pub use config::{ModelChoice, PipelineConfig, RunSettings};
pub use error::{CliError, Result};
pub use panel::{ingest_csv, InputMode, ReturnPanel};
pub use pipeline::{run_on_panel, PipelineOutcome};
