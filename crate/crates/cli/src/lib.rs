//! Command-line front end: strict JSON configuration, subcommand dispatch
//! and reproducible artifacts (`report.json`, `records.csv`, `manifest.json`).

pub mod app;
pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Command, Outcome, RunSummary};
pub use config::{parse_config, ConfigError, RunConfig, Violation};
