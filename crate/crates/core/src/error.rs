use std::path::PathBuf;

use crate::trainer::TrainingTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Training diverged. The trace holds every epoch completed before `epoch`.
    #[error("non-finite loss or weights at epoch {epoch}")]
    NonFinite {
        epoch: usize,
        partial: Box<TrainingTrace>,
    },

    /// The metric is undefined on this input (e.g. a single-class PR draw).
    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("zero variance: t statistic is undefined")]
    ZeroVariance,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("nothing to report: {0}")]
    NothingToReport(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
