use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Backend,
    Data,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("record {id}: {message}")]
    Schema { id: String, message: String },

    #[error("lexicon line {line}: {message}")]
    LexiconLine { line: usize, message: String },

    #[error("duplicate: {0}")]
    DuplicateWord(String),

    #[error("ambiguous token {token:?} cannot be resolved in strict mode")]
    UnresolvedAmbiguity { token: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("backend {backend}: {message}")]
    Backend {
        backend: String,
        message: String,
        retryable: bool,
    },

    #[error("entailment judge failed on pair ({premise:?}, {hypothesis:?}): {message}")]
    Judge {
        premise: String,
        hypothesis: String,
        message: String,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("text has {len} tokens, model context is {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error(
        "drop rate {rate:.3} exceeds ceiling {ceiling:.3} ({dropped}/{total} records dropped)"
    )]
    DropCeiling {
        dropped: usize,
        total: usize,
        rate: f64,
        ceiling: f64,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("non-finite loss at epoch {epoch}; last good checkpoint: {last_good:?}")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Option<PathBuf>,
    },

    #[error("missing reports: {0}")]
    MissingReports(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            id: id.into(),
            message: message.into(),
        }
    }

    pub fn backend(
        backend: impl Into<String>,
        message: impl Into<String>,
        retryable: bool,
    ) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
            retryable,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::Backend {
                retryable: true,
                ..
            }
        )
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::Backend { .. }
            | Error::Judge { .. }
            | Error::Model(_)
            | Error::NonFiniteLoss { .. } => ErrorCategory::Backend,
            Error::Stage { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

impl From<candle_core::Error> for Error {
    fn from(e: candle_core::Error) -> Self {
        Error::Model(e.to_string())
    }
}
