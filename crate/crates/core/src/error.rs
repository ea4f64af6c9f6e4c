use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("label {label} out of range (classes: {classes})")]
    LabelOutOfRange { label: u32, classes: u32 },

    #[error("index {index} out of range (len: {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("file format error: {0}")]
    Format(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(expected: impl Into<String>, got: impl Into<String>, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            got: got.into(),
            context,
        }
    }
}
