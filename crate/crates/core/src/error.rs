use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid granularity m={m} n={n} l={l}")]
    InvalidGranularity { m: usize, n: usize, l: usize },

    #[error("utterance {utterance} has {frames} frames, fewer than the {required} required")]
    UtteranceTooShort {
        utterance: String,
        frames: usize,
        required: usize,
    },

    #[error("insufficient data for n patterns: {segments} segments for n={n}")]
    InsufficientData { segments: usize, n: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("granularity mismatch: {0}")]
    GranularityMismatch(String),

    #[error("missing scores for {0}")]
    MissingScores(String),

    #[error("unknown utterance {0}")]
    UnknownUtterance(String),
}
