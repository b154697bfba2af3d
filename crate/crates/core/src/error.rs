use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("forward cache is stale (computed at parameter version {cached}, model is at {current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("eigenvalue iteration did not converge on a {dim}x{dim} matrix after {iterations} iterations")]
    NonConvergence { dim: usize, iterations: usize },

    #[error("gradient check failed: relative error {max_rel_error:.3e} at {worst}")]
    GradientCheck { max_rel_error: f64, worst: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("incompatible file {path}: {detail}")]
    Version { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Json(_) | Error::Version { .. } => 3,
            Error::Domain(_)
            | Error::Singular(_)
            | Error::NonFinite(_)
            | Error::NonConvergence { .. }
            | Error::GradientCheck { .. } => 4,
            Error::Precondition(_)
            | Error::Shape { .. }
            | Error::OutOfRange(_)
            | Error::StaleCache { .. } => 5,
        }
    }
}
