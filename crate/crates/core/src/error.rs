use thiserror::Error;

/// Errors raised by the library.
///
/// Input problems (malformed matrices, invalid measures, bad parameters) are
/// kept apart from numeric failures so the CLI can map them to distinct exit
/// codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite entry at ({0},{1})")]
    NonFinite(usize, usize),
    #[error("asymmetric at ({0},{1})")]
    Asymmetric(usize, usize),
    #[error("negative entry at ({0},{1})")]
    Negative(usize, usize),
    #[error("nonzero diagonal at ({0},{0})")]
    NonzeroDiagonal(usize),
    #[error("triangle violated ({0},{1}) via {2}")]
    Triangle(usize, usize, usize),
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, found: usize, expected: usize },
    #[error("covariance is not positive semi-definite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("factorization failed after jitter {jitter:e} (reconstruction error {error:e})")]
    Factorization { jitter: f64, error: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_input(&self) -> bool {
        !matches!(self, Error::Factorization { .. } | Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
