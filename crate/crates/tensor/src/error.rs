use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand extents disagree on a specific axis.
    #[error("{op}: dimension mismatch on axis {axis}: {lhs:?} vs {rhs:?}")]
    AxisMismatch {
        op: &'static str,
        axis: usize,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Operand ranks or overall layout are incompatible.
    #[error("{op}: dimension error: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("{op}: invalid argument: {msg}")]
    Argument { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed tensor data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl TensorError {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Dimension { op, msg: msg.into() }
    }

    pub(crate) fn arg(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Argument { op, msg: msg.into() }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Domain { op, msg: msg.into() }
    }
}

/// Compares two shapes and reports the first axis that differs.
pub(crate) fn check_same_shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<()> {
    if lhs == rhs {
        return Ok(());
    }
    let axis = lhs
        .iter()
        .zip(rhs)
        .position(|(a, b)| a != b)
        .unwrap_or(lhs.len().min(rhs.len()));
    Err(TensorError::AxisMismatch {
        op,
        axis,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
