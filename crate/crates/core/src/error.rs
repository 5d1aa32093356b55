use posecue_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// A configuration value violates a declared invariant.
    #[error("config violation: {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        PipelineError::Config { key: key.into(), reason: reason.into() }
    }

    /// Short machine-readable tag used in single-line CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Tensor(_) => "tensor",
            PipelineError::Config { .. } => "config",
            PipelineError::Parse { .. } => "parse",
            PipelineError::Data(_) => "data",
            PipelineError::Degenerate(_) => "degenerate",
            PipelineError::Diverged(_) => "diverged",
            PipelineError::Argument(_) => "argument",
            PipelineError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
