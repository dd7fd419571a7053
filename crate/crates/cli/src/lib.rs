//! Configuration, CSV data exchange and subcommands behind the `attestpo`
//! binary.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

pub use config::{parse_config, ModeSelection, RunConfig};
pub use error::{CliError, Result};
