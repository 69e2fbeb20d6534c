use thiserror::Error;

/// Errors shared across the acoustic-model crates.
#[derive(Debug, Error)]
pub enum SvsError {
    /// Tensor operands do not conform.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or missing data (dataset files, checkpoints, configs).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure during training or generation (NaN/Inf).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SvsError>;

impl SvsError {
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        SvsError::ShapeMismatch {
            op: op.to_string(),
            detail: detail.into(),
        }
    }
}
