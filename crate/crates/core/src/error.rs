use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("table `{table}`: {message}")]
    TableParse { table: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing table files: {}", .0.join(", "))]
    MissingTables(Vec<String>),

    #[error("{path}:{line}: {message}")]
    DatasetParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("task generation: {0}")]
    Generation(String),

    #[error("encoding: {0}")]
    Encoding(String),

    #[error("non-finite value in {location}")]
    Numeric { location: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("training: {0}")]
    Training(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("retrieval: {0}")]
    Retrieval(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing artifact {path}: run `nxkt {producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
