use thiserror::Error;

/// Errors raised anywhere in the score-operator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64, trace: Vec<f64> },

    #[error("joint training diverged at step {step}: loss {loss}")]
    JointDivergence {
        step: u64,
        loss: f64,
        vae_trace: Vec<f64>,
        sgm_trace: Vec<f64>,
    },

    #[error("sampling error at step {step}: {reason}")]
    Sampling { step: usize, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("rank error: component {index} has eigenvalue {value:e}")]
    Rank { index: usize, value: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
