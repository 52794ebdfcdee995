use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("layer {ell} out of range [{lo}, {hi}]")]
    LayerOutOfRange { ell: usize, lo: usize, hi: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("only {usable} eigenvalues above the floor, need at least {needed}")]
    TooFewEigenvalues { usable: usize, needed: usize },

    #[error("training diverged at epoch {epoch}: risk {risk:e} exceeds {limit:e}")]
    Diverged { epoch: usize, risk: f64, limit: f64 },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
