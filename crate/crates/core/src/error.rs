use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape disagreement, e.g. matmul inner dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid hyperparameter or op argument (non-positive dilation, even
    /// smoothing kernel, lr <= 0, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data outside the operation's domain (empty series, zero-variance
    /// channel, T < I+O, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// API contract violation (backward on a non-scalar, anchor out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad run configuration (unknown key, split shorter than a window,
    /// contradictory ablation flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// CSV / checkpoint ingestion failure; carries the offending location.
    #[error("data error: {0}")]
    Data(String),

    /// Training diverged (non-finite loss); names the iteration.
    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
