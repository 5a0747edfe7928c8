//! Command-line flows over `faultbin-core`: file formats, dataset loading,
//! run manifests and the `faultbin` subcommands.

pub mod cli;
pub mod commands;
pub mod error;
pub mod formats;
pub mod idx;

pub use cli::{run, Manifest};
pub use error::{CliError, Result};
