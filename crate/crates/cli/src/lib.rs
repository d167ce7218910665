//! Library surface of the `sbka` binary: the run-configuration schema and
//! the subcommand implementations.

pub mod commands;
pub mod config;

pub use config::RunConfig;
