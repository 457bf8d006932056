use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotations too dispersed for averaging: pairwise geodesic distance {distance:.6} rad >= pi/2")]
    DispersionTooLarge { distance: f64 },

    #[error("scale/misalignment matrix is singular: diagonal entry {index} is {value} (must be > 0)")]
    SingularCorrection { index: usize, value: f64 },

    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("timestamps not strictly increasing at index {index}: {prev} -> {next}")]
    NonMonotonicTimestamps { index: usize, prev: f64, next: f64 },

    #[error("{name} is not symmetric positive definite")]
    NotSpd { name: &'static str },

    #[error("variable grid does not match dataset: {0}")]
    GridMismatch(String),

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("no IMUs given")]
    EmptyImuSet,

    #[error("error window for imu {imu} is empty")]
    EmptyWindow { imu: usize },

    #[error("selected axes are near-coplanar (condition number {condition:.3e} exceeds {ceiling:.1e})")]
    NearCoplanar { condition: f64, ceiling: f64 },

    #[error("selection is stale: condition number {condition:.3e} exceeds {ceiling:.1e}")]
    StaleSelection { condition: f64, ceiling: f64 },

    #[error("selection kind mismatch: expected {expected}, got {actual}")]
    SelectionKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("dataset lasts {duration:.3} s, shorter than one {needed:.3} s track")]
    TooShortDataset { duration: f64, needed: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaMismatch { found: String, expected: String },

    #[error("{path}:{line}: corrupt row: {reason}")]
    CorruptRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unknown method '{0}' (expected ave, bac, bac2 or single:<i>)")]
    UnknownMethod(String),

    #[error("calibration covers {calibration} IMUs but dataset has {dataset}")]
    IncompatibleCalibration { calibration: usize, dataset: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            DispersionTooLarge { .. }
            | SingularCorrection { .. }
            | Divergence(_)
            | NearCoplanar { .. }
            | StaleSelection { .. }
            | NotSpd { .. } => ErrorClass::Numerical,
            UnknownMethod(_) | InvalidConfig(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
