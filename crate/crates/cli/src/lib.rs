//! Command implementations behind the `convloc` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
