use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Period;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sentence has {tokens} tokens but {lemmas} lemmas")]
    LengthMismatch { tokens: usize, lemmas: usize },

    #[error("word {word:?} absent in {period} period")]
    AbsentInPeriod { word: String, period: Period },

    #[error("invalid pattern {template:?}: {reason}")]
    InvalidPattern { template: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("word {0:?} is unrepresentable: no substitute survives df filtering")]
    Unrepresentable(String),

    #[error("empty distance matrix")]
    EmptyMatrix,

    #[error("{period} period needs at least 2 vectors, got {got}")]
    TooFewVectors { period: Period, got: usize },

    #[error("no sense-gain evidence for {0:?}")]
    NoGainEvidence(String),

    #[error("need at least 2 common words, got {0}")]
    TooFewWords(usize),

    #[error("zero rank variance on the {0} side")]
    ZeroVariance(&'static str),

    #[error("stage {stage}: missing input {path} (run `{requires}` first)")]
    MissingInput {
        stage: &'static str,
        requires: &'static str,
        path: PathBuf,
    },

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 missing input, 3 provider failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput { .. } => 2,
            Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Provider(_) => 3,
            _ => 1,
        }
    }
}
