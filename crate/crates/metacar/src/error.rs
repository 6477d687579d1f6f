use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state encountered: {0}")]
    NonFiniteState(String),
    #[error("shape mismatch: {what} expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence too short: need at least {need} samples, got {got}")]
    SequenceTooShort { need: usize, got: usize },
    #[error("horizon {t_h} s does not exceed delay {t_d} s: aligned window empty")]
    EmptyAlignedWindow { t_h: f64, t_d: f64 },
    #[error("out-of-order timestamp: {t} not after {last}")]
    OutOfOrderTimestamp { t: f64, last: f64 },
    #[error("failed to draw a feasible delay after {0} retries")]
    DelayRetriesExhausted(usize),
    #[error("empty support split")]
    EmptySupport,
    #[error("non-finite meta-loss at episode {episode}; task params: {params}")]
    NonFiniteMetaLoss { episode: usize, params: String },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
