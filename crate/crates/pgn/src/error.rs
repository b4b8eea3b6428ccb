use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgnError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Arg(String),

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

impl PgnError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        PgnError::Dim {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PgnError>;
