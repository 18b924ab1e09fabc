use thiserror::Error;

/// Errors raised anywhere in the decision engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("singular design matrix")]
    Singular,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown DGP kind `{0}` (expected one of a, b, c, d, e)")]
    UnknownKind(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("price {price} outside admissible range [{lo}, {hi}]")]
    PriceOutOfRange { price: f64, lo: f64, hi: f64 },

    #[error("no training records at price {0}")]
    NoRecordsAtPrice(f64),

    #[error("kernel weights vanish at every training record")]
    ZeroWeights,

    #[error("training produced a non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("malformed model payload: {0}")]
    Payload(String),

    #[error("model format version {found} is incompatible with supported version {expected}")]
    Version { found: u64, expected: u64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
