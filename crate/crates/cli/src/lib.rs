//! Command implementations behind the `poolsel` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;
