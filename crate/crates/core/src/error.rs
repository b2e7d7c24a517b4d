use thiserror::Error;

use crate::model::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record that does not parse, with its 1-based line number.
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("shape error in slice '{slice}': {msg}")]
    Shape { slice: String, msg: String },

    #[error("duplicate slice id '{0}'")]
    DuplicateId(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient loss history for descent rate")]
    InsufficientHistory,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Non-finite values appeared during optimization. Carries the last
    /// state whose values were all finite, when one exists.
    #[error("divergence at epoch {epoch} during the {step} update")]
    Divergence {
        epoch: usize,
        step: &'static str,
        last_finite: Option<Box<Checkpoint>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(slice: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape {
            slice: slice.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InsufficientHistory => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
