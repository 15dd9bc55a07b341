use thiserror::Error;

use crate::ngram::ArpaError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Arpa(#[from] ArpaError),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("training diverged at step {step}: loss {loss} (grad norm {grad_norm})")]
    NonFinite {
        step: usize,
        loss: f64,
        grad_norm: f64,
    },

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("session capacity exceeded; retry after {retry_after_ms} ms")]
    Capacity { retry_after_ms: u64 },

    #[error("locale `{0}` is not eligible for suggestions")]
    NotEligible(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than a defect.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
