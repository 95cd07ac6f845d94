//! Experiment harness around `fixpo-core`: JSON run configs, seeded training
//! runs with JSON-lines metrics, grid sweeps and smoothed curve export.

pub mod config;
pub mod export;
pub mod run;
pub mod stats;
pub mod sweep;

pub use config::{Algorithm, ConfigError, RunConfig, SCHEMA_VERSION};
pub use run::{run, MetricsRecord, RunError, RunOutcome, RunSummary, Session};
