use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimension {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("scaling coefficient must be positive, got {0}")]
    Scaling(f64),

    #[error("non-finite value at timestep {timestep}: {what}")]
    Numeric { timestep: usize, what: String },

    #[error("alpha_bar is {alpha_bar} at timestep {timestep}; x0 estimate is singular")]
    Singularity { timestep: usize, alpha_bar: f64 },

    #[error("alpha_bar {alpha_bar} at timestep {timestep} is outside (0, 1)")]
    ScheduleBoundary { timestep: usize, alpha_bar: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("mask selects no pixels")]
    DegenerateMask,

    #[error("need a batch of at least 2, got {0}")]
    InsufficientBatch(usize),

    #[error("metric undefined: {0}")]
    MetricDomain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed grid file: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
