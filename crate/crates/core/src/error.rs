use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("could not parse triples: {reason}; raw response: {raw}")]
    Parse { reason: String, raw: String },

    #[error("provider {provider} failed after {attempts} attempt(s): {reason}")]
    Provider {
        provider: String,
        attempts: usize,
        reason: String,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by bad input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Parse { .. } | Error::Json(_) | Error::Metric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
