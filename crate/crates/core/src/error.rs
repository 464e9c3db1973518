use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("support memory is empty")]
    EmptyMemory,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("weighted combination has vanishing norm")]
    DegenerateCombination,
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("encoder failure: {0}")]
    EncoderFailure(String),
    #[error("unparseable caption: {0:?}")]
    UnparseableCaption(String),
    #[error("unknown token: {0:?}")]
    UnknownToken(String),
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty hypothesis")]
    EmptyHypothesis,
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("file truncated: {0}")]
    Truncated(&'static str),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
