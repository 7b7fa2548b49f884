use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] eenr_tensor::TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON: {source}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("impressions reference unknown news ids: {0:?}")]
    DanglingNews(Vec<String>),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("illegal tag transition {from} -> {to} at position {position}")]
    IllegalTransition {
        from: String,
        to: String,
        position: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unknown variant `{name}`, expected one of {valid:?}")]
    UnknownVariant { name: String, valid: Vec<String> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
