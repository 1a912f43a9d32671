use thiserror::Error;

use crate::transcript::TranscriptError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("unknown cluster id {0}")]
    UnknownCluster(usize),

    #[error("product-quantizer codebook is not trained")]
    Untrained,

    #[error("index format error: {0}")]
    Format(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("retrieval failed during {stage}: {source}")]
    Retrieval {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Transcript(#[from] TranscriptError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
