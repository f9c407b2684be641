use std::path::PathBuf;

use crate::ir::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range [{min}, {max}]: {reason}")]
    InvalidRange { min: f64, max: f64, reason: &'static str },

    #[error("unsupported bit width {0} (only 8 is supported)")]
    UnsupportedBits(u32),

    #[error("scheme {scheme:?} is incompatible with signed={signed}")]
    InvalidScheme { scheme: crate::ir::Scheme, signed: bool },

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer {layer}: 32-bit accumulator may overflow (worst case {bound})")]
    AccumulatorOverflow { layer: String, bound: i128 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported ir_version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("calibration input {index} has shape {found:?}, expected {expected:?}")]
    ShapeInconsistency { index: usize, expected: Vec<usize>, found: Vec<usize> },

    #[error("scheme precondition violated: {0}")]
    SchemePrecondition(String),

    #[error("layer {0}: tensor range is zero, cannot snap to a power of two")]
    NonPositiveRange(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("calibration set has no labels")]
    MissingLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("graph failed validation: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }

    /// True for errors caused by the caller's flags or inputs rather than a toolkit fault.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::SchemePrecondition(_)
                | Error::InvalidConfig(_)
                | Error::EmptyCalibration
                | Error::MissingLabels
                | Error::InvalidRange { .. }
                | Error::UnsupportedBits(_)
                | Error::InvalidScheme { .. }
                | Error::TopologyMismatch(_)
        )
    }
}
