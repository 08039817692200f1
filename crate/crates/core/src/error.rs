use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("loss undefined: {0}")]
    LossUndefined(String),

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("missing modality: {0}")]
    MissingModality(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Schema(_) | Error::Parse { .. } | Error::Checkpoint(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
