//! Error type shared by every module.

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate buffer: {0}")]
    DegenerateBuffer(String),

    #[error("invalid buffer spec: {0}")]
    InvalidSpec(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("policy is not affine on its region: max residual {residual:e} exceeds {tolerance:e}")]
    NotAffine { residual: f64, tolerance: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("transformation domain error: {0}")]
    Domain(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: expected length {want}, got {got}"
        )))
    }
}
