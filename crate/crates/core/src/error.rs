use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum DbaError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DbaError>;

pub(crate) fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> DbaError {
    DbaError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
