use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate critical point: {0}")]
    Degenerate(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("ambiguous limit: final state lies within tolerance of critical points {0} and {1}")]
    AmbiguousLimit(usize, usize),

    #[error("unresolved connection count from {hi} to {lo}: {reason}")]
    Unresolved {
        hi: usize,
        lo: usize,
        reason: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn shape_check(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
