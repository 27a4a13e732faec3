//! Command-line orchestration for the `polaron` laboratory: configuration,
//! run directories with content-hashed artifacts, and the `build`, `spectrum`,
//! `verify`, `scan` and `report` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use error::{CliError, CliResult};
