use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {record}: {reason}")]
    Format { record: String, reason: String },

    #[error(
        "rank pooling diverged at iteration {iteration} (energy {energy:.3e}); try a smaller step size"
    )]
    Divergence { iteration: usize, energy: f64 },

    #[error("{stage}: non-finite loss at {unit} {index}")]
    NonFiniteLoss {
        stage: &'static str,
        unit: &'static str,
        index: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
