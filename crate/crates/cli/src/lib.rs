//! Reproducible runs on top of `insole-motion`: configuration, training
//! drivers, whole-recording inference, reports and the benchmark harness.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod objectives;
pub mod pipeline;
pub mod train;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
