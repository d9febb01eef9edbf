use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("infeasible size: {0}")]
    Feasibility(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("projected weight {weight:e} below numerical floor at site {site}")]
    NumericalDegeneracy { site: usize, weight: f64 },

    #[error("invalid state at t = {time} (event {event}): {reason}")]
    InvalidState {
        time: f64,
        event: usize,
        reason: String,
    },

    #[error("unsupported partition: {0}")]
    UnsupportedPartition(String),

    #[error("series alignment: {0}")]
    Alignment(String),

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
