use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the sanitization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("embedding file {0} contains no vectors")]
    EmptyEmbeddings(PathBuf),

    #[error("line {line}: expected {expected} components, found {found}")]
    InconsistentDim {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: cannot parse {value:?} as a number")]
    BadFloat { line: usize, value: String },

    #[error("line {line}: non-finite component in vector for {token:?}")]
    NonFinite { line: usize, token: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("zero-norm vector for {0:?} is undefined under cosine similarity")]
    ZeroNorm(String),

    #[error("invalid customization parameter K={k} for vocabulary of {vocab} tokens")]
    InvalidK { k: usize, vocab: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("invalid epsilon {0}: must be finite and >= 0")]
    InvalidEpsilon(f64),

    #[error("invalid percent {0}: must lie in (0, 100]")]
    InvalidPercent(f64),

    #[error("rows belong to different output sets ({0} vs {1})")]
    DifferentOutputSets(usize, usize),

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("importance record {record_id:?}: {tokens} tokens but {scores} scores")]
    LengthMismatch {
        record_id: String,
        tokens: usize,
        scores: usize,
    },

    #[error("sensitive list references unknown record {0:?}")]
    UnknownRecord(String),

    #[error("duplicate record id {0:?}")]
    DuplicateRecord(String),

    #[error(
        "record {record_id:?} position {position}: importance token {expected:?} does not match corpus token {found:?}"
    )]
    TokenMismatch {
        record_id: String,
        position: usize,
        expected: String,
        found: String,
    },

    #[error("span {start}..{end} does not fit text of length {len}")]
    SpanMismatch { start: usize, end: usize, len: usize },

    #[error("mapping cache: {0}")]
    Cache(String),

    #[error("attack report has {successes} successes out of {attempts} attempts")]
    SuccessesExceedAttempts { attempts: u64, successes: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
