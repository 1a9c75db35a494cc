use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad network file: {0}")]
    Format(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown attribute(s): {}", .0.join(", "))]
    UnknownAttribute(Vec<String>),

    #[error("query parse error: {0}")]
    Query(String),

    #[error("only {available} candidate(s) match the query but k = {requested} were requested (short by {})", requested - available)]
    Shortfall { requested: usize, available: usize },

    #[error("degenerate hull: {0}")]
    DegenerateHull(String),

    #[error("ill-posed color fit: {0}")]
    IllPosed(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image codec error: {0}")]
    Codec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
