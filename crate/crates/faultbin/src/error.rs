use std::path::Path;

use faultbin_core::array::ArrayError;
use faultbin_core::atpg::FaultError;
use faultbin_core::cones::ConeError;
use faultbin_core::learn::LearnError;
use faultbin_core::macsim::MacsimError;
use faultbin_core::netlist::NetlistError;

/// Failures grouped by exit code: malformed input, rejected parameters,
/// and filesystem problems.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> CliError {
        CliError::Parse(format!("{}: {e}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<NetlistError> for CliError {
    fn from(e: NetlistError) -> Self {
        match e {
            NetlistError::Syntax { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ArrayError> for CliError {
    fn from(e: ArrayError) -> Self {
        match e {
            ArrayError::CorruptFsr(_) => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Dataset(_) => CliError::Parse(e.to_string()),
            LearnError::Array(a) => a.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

macro_rules! validation {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation!(ConeError, FaultError, MacsimError);
