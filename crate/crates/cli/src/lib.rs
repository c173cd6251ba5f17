//! Command implementations behind the `stable-gvar` binary.

pub mod config;
pub mod error;
pub mod fit;
pub mod report;

pub use config::Config;
pub use error::{CliError, CliResult};
