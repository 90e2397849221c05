use thiserror::Error;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("shape mismatch in {ctx}: expected {expected}, got {got}")]
    ShapeMismatch {
        ctx: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite values in input of {0}")]
    NonFinite(&'static str),

    #[error("invalid argument for {ctx}: {msg}")]
    InvalidArg { ctx: &'static str, msg: String },

    #[error("batch norm has no recorded statistics; run at least one training-mode forward first")]
    EmptyBatchNormStats,

    #[error("invalid architecture spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("marker is entirely outside the imaging volume for this pose")]
    MarkerOutOfView,

    #[error("malformed file {path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
