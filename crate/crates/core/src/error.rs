use thiserror::Error;

/// Errors produced by the estimators and their supporting machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("rank {rank} out of range (maximum {max}) {context}")]
    RankOutOfRange {
        rank: usize,
        max: usize,
        context: String,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// The regressors carry no usable variation once the fixed-effect
    /// structure has been removed.
    #[error("degenerate regressors: {0}")]
    DegenerateRegressors(String),

    /// Every index of a dimension has an empty kernel neighbourhood.
    #[error("all {size} rows of the weight matrix for dimension {dim} are self-only; widen the bandwidth or check the proxies")]
    DegenerateDimension { dim: usize, size: usize },

    /// A residual flattening has no variation to build proxies from.
    #[error("degenerate proxies: {0}")]
    DegenerateProxy(String),

    #[error("singular moment matrix: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
