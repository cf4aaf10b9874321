use thiserror::Error;

use crate::model::CharSpan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("span {span} lies outside text of length {text_length}")]
    SpanOutOfBounds { span: CharSpan, text_length: usize },

    #[error("span {0} covers no token")]
    SnapEmpty(CharSpan),

    #[error("annotation {annotation_id} belongs to generation {expected}, not {actual}")]
    GenerationMismatch {
        annotation_id: String,
        expected: String,
        actual: String,
    },

    #[error("unknown generation {0}")]
    UnknownGeneration(String),

    #[error("dataset failed validation with {0} violation(s)")]
    InvalidDataset(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("all scores are -inf")]
    NoFiniteScore,

    #[error("no sentence boundary between {min_tokens} and {max_tokens} tokens after {attempts} attempt(s)")]
    NoSentenceBoundary {
        min_tokens: usize,
        max_tokens: usize,
        attempts: usize,
    },

    #[error("language model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
