use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate trajectory geometry: {0}")]
    DegenerateGeometry(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{path}: missing entry `{name}`")]
    MissingEntry { path: PathBuf, name: String },

    #[error("{path}: entry `{name}` has unsupported type ({found})")]
    DataType {
        path: PathBuf,
        name: String,
        found: String,
    },

    #[error("{path}: {message}")]
    Container { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("noise covariance is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    Factorization { eigenvalue: f64 },

    #[error("normal operator is not positive definite: pᴴAp = {curvature:e} at iteration {iteration}")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("data contains no signal: {0}")]
    ZeroData(String),

    #[error("problem too large for direct evaluation: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. } | Error::NotPositiveDefinite { .. } | Error::ZeroData(_)
        )
    }
}
