use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while reading one of the binary/text asset formats.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing header")]
    MissingHeader,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload at record {record}")]
    Truncated { record: usize },
    #[error("record count mismatch: header declares {declared}, payload continues past record {record}")]
    TrailingData { declared: usize, record: usize },
    #[error("non-finite value in field `{field}` of record {record}")]
    NonFinite { record: usize, field: &'static str },
    #[error("invalid record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("texture is unsampleable (no positive texel)")]
    Unsampleable,
    #[error("no surface coverage from any camera")]
    NoSurfaceCoverage,
    #[error("nothing to shadow: no scene surface inside the shadow region")]
    NothingToShadow,
    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
