use std::path::PathBuf;

use crate::numeric::NumericError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("sample `{id}`: {message}")]
    Data { id: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, sample `{sample}`: {cause}")]
    Diverged {
        epoch: usize,
        sample: String,
        cause: NumericError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            id: id.into(),
            message: message.into(),
        }
    }
}
