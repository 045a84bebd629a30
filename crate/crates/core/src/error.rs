use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm and cannot be normalized")]
    ZeroVector,

    #[error("vector contains non-finite entries")]
    NonFinite,

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("column index {index} out of range for dictionary width {width}")]
    OutOfRange { index: usize, width: usize },

    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("homotopy path exceeded {0} breakpoints")]
    BreakpointCapExceeded(usize),

    #[error("active-set Gram matrix is numerically singular ({0})")]
    NumericalBreakdown(String),

    #[error("iteration cap of {0} exceeded before convergence")]
    IterationCapExceeded(usize),

    #[error("no support of size <= {max_support} reaches residual tolerance {residual_tol}")]
    Infeasible { max_support: usize, residual_tol: f64 },

    #[error("support enumeration needs {0} subsets, above the cap")]
    EnumerationTooLarge(u128),

    #[error("no dictionary column lies outside the temporal window")]
    NoEligibleColumns,

    #[error("timestamps must be non-decreasing ({previous} then {current})")]
    NonMonotonicTimestamp { previous: f64, current: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
