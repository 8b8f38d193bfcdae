use thiserror::Error;

/// Errors raised by the post-processing toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter `{name}` out of domain: {value} ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("seed source exhausted: requested {requested} bits, {available} remaining")]
    SeedExhausted { requested: usize, available: usize },

    #[error("fast hash capacity exceeded: {0}")]
    PrecisionOverflow(String),

    #[error("matrix is not full row rank: rank {rank} < rows {rows}")]
    RankDeficient { rank: usize, rows: usize },

    #[error("decoder search of {candidates} candidates exceeds the cap of {cap}")]
    SearchCapExceeded { candidates: u128, cap: u128 },

    #[error("stream pad over-consumed: cursor {cursor} + {requested} exceeds pad length {len}")]
    PadOverConsumed {
        cursor: usize,
        requested: usize,
        len: usize,
    },

    #[error("out-of-order chunk: expected offset {expected}, got {actual}")]
    OutOfOrder { expected: usize, actual: usize },

    #[error("ledger refused draw on matrix `{matrix_id}`: budget exhausted")]
    BudgetExhausted { matrix_id: String },

    #[error("unknown matrix `{0}`")]
    UnknownMatrix(String),

    #[error("pad shortfall: {0}")]
    PadShortfall(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
