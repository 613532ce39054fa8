use thiserror::Error;

use crate::instructions::Violation;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not skew-Hermitian (max deviation {0:.3e})")]
    NotSkewHermitian(f64),

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid measurement model: {0}")]
    InvalidMeasurement(String),

    #[error("invalid instruction set ({} violation(s)): {}", .0.len(), first_violation(.0))]
    InvalidInstructions(Vec<Violation>),

    #[error("factor table is not a normalized distribution: {0}")]
    NotNormalized(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver returned status {status:?}: {message}")]
    Solver { status: crate::conic::SolveStatus, message: String },

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| x.to_string()).unwrap_or_default()
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { field: field.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
