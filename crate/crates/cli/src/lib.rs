//! Experiment runner for domain noise alignment on the analytic testbed.

pub mod commands;
pub mod config;
pub mod experiment;

use std::fmt;

pub use config::RunConfig;
pub use experiment::{Domain, Setting, Setup, Suite};

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingStats(String),
    CalibrationMismatch(String),
    Core(noise_align_core::Error),
    Io(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use noise_align_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingStats(_) | CliError::CalibrationMismatch(_) => EXIT_CALIBRATION,
            CliError::Core(e) => match e {
                E::Parameter { .. } | E::InsufficientBatch(_) => EXIT_CONFIG,
                E::Calibration(_) => EXIT_CALIBRATION,
                E::Io { .. } | E::Format { .. } => EXIT_OTHER,
                _ => EXIT_NUMERIC,
            },
            CliError::Io(_) | CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::MissingStats(m) => write!(f, "{m}"),
            CliError::CalibrationMismatch(m) => write!(f, "calibration mismatch: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) | CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<noise_align_core::Error> for CliError {
    fn from(e: noise_align_core::Error) -> Self {
        CliError::Core(e)
    }
}
