//! Crate-wide error type shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus contains no usable documents")]
    EmptyCorpus,

    #[error("retrieval produced no candidate contexts for the sentence")]
    NoCandidates,

    #[error("cosine is undefined for a zero-norm vector")]
    ZeroVector,

    #[error("semantic vector requires a non-empty context list")]
    EmptyContextList,

    #[error("correlation is undefined for constant input")]
    ConstantInput,

    #[error("correlation is undefined when an input has zero variance")]
    ZeroVariance,

    #[error("token id {id} is out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },

    #[error("dataset contains only {0} usable examples")]
    DatasetTooSmall(usize),

    #[error("training set must contain both positive and negative labels")]
    SingleLabelDataset,

    #[error("corpus has too few sentences to sample the requested pairs")]
    CorpusTooSmall,

    #[error("score weights must not all be zero")]
    AllZeroWeights,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sentence has no tokens")]
    EmptySentence,

    #[error("sentence id {0} is not in the corpus")]
    UnknownSentenceId(u32),

    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: String, expected: &'static str },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
