use std::path::PathBuf;

/// Error type shared by all library modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A covariance matrix is not positive definite. Callers are expected to
    /// regularize before evaluating densities.
    #[error("degenerate covariance matrix (not positive definite)")]
    DegenerateCovariance,

    #[error("insufficient data: {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("degenerate centroid: {0}")]
    DegenerateCentroid(String),

    #[error("hypothesis space too large: {0} exceeds the 65536 guard")]
    HypothesisSpace(usize),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
