use thiserror::Error;

/// Errors raised by model construction, evaluation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested combination (family, arity, sign) is not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Fewer than `needed` time points of history were supplied.
    #[error("insufficient history: need {needed} initial time points, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    /// Dimensions of inputs do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Parameter layout cannot map a pair into the global vector.
    #[error("layout error: {0}")]
    Layout(String),

    /// An objective returned a non-finite value at a probe point.
    #[error("non-finite objective value at probe point {0:?}")]
    NonFinite(Vec<f64>),

    /// Malformed input file.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
