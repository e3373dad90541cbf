use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid mask: row {row} has no unmasked position")]
    InvalidMask { row: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("history action at t={action} is later than request time t_c={request}")]
    TemporalOrder { action: i64, request: i64 },

    #[error("candidate ttrl {0}s lies outside the (0, 86400] window")]
    WindowViolation(i64),

    #[error("degenerate slate: no positive label")]
    DegenerateSlate,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at batch {batch}: loss is not finite (parameter norms: {norms})")]
    Divergence { batch: usize, norms: String },

    #[error("validation failed at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
