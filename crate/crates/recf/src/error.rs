use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary: no token reached min_count = {min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("word id {id} out of range for vocabulary of {len} words")]
    UnknownWord { id: usize, len: usize },

    #[error("empty corpus: nothing to train on")]
    EmptyCorpus,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate entry for user {user}, item {item}")]
    DuplicateEntry { user: usize, item: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("no observed entries to solve against")]
    NoObservations,

    #[error("no item descriptions present")]
    NoDescriptions,

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("too few entries: have {have}, need at least {need}")]
    TooFewEntries { have: usize, need: usize },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("{path}:{line}: malformed line: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: rating {value} outside declared scale [{min}, {max}]")]
    OutOfScale {
        path: String,
        line: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("unsupported format name {0:?} (expected double-colon, tab, or comma)")]
    UnknownFormat(String),

    #[error("bad model file: {0}")]
    BadModelFile(String),

    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
