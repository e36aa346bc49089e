use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("rotation is not orthonormal with det +1 (error {error:.3e})")]
    NotARotation { error: f64 },

    /// |R[2][0]| is too close to 1 for a unique Euler decomposition.
    #[error("gimbal lock: R[2][0] = {r20}")]
    GimbalLock { r20: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("sample count {requested} out of range 1..={available}")]
    BadCount { requested: usize, available: usize },

    #[error("size mismatch: {what} (expected {expected}, got {got})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("trajectory length mismatch: ground truth has {gt} poses, estimate has {est}")]
    LengthMismatch { gt: usize, est: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in the numerics rather than in the data.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure(_) | Error::GimbalLock { .. } | Error::NotARotation { .. } => {
                true
            }
            Error::Frame { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
