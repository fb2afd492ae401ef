use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An internal contract between modules does not hold.
    #[error("contract violated: {0}")]
    Contract(String),

    /// An index is out of range or refers to an unusable element.
    #[error("index error: {0}")]
    Index(String),

    /// A text file did not parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged or could not proceed.
    #[error("training failed at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// A checkpoint could not be read back.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
