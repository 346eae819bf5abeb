use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum EitError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A domain invariant does not hold. `entity` names the first offender.
    #[error("invariant violation at {entity}: {detail}")]
    Invariant { entity: String, detail: String },

    #[error("electrode layout infeasible: {0}")]
    Layout(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("numeric error: {detail} (residual {residual:e})")]
    Numeric { detail: String, residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("guidance provider error: {0}")]
    Guidance(#[from] GuidanceError),
}

impl EitError {
    pub(crate) fn invariant(entity: impl Into<String>, detail: impl Into<String>) -> Self {
        EitError::Invariant {
            entity: entity.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EitError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure modes of a guidance provider. Each is distinct so callers can
/// apply their own fallback policy.
#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("request timed out after {0:.1} s")]
    Timeout(f64),

    #[error("non-success status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("malformed response body: {0}")]
    Malformed(String),

    #[error("response violates contract: {0}")]
    Contract(String),

    #[error("invalid request: {0}")]
    Request(String),
}

pub type Result<T, E = EitError> = std::result::Result<T, E>;
