use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        file: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("dataset has no {0}")]
    EmptyVocabulary(&'static str),

    #[error("relation {0} does not occur in the training split")]
    RelationNotInTrain(String),

    #[error("unknown relation name: {0}")]
    UnknownRelation(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("checkpoint: bad magic bytes (expected \"AETR\", found {0:?})")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("cannot corrupt triples in a store with {0} entities")]
    CannotCorrupt(usize),

    #[error("non-finite value in {tensor} row {row}")]
    NonFinite { tensor: &'static str, row: usize },

    #[error("training diverged at step {step} (loss {loss}); last good checkpoint: {last_good}")]
    Diverged {
        step: usize,
        loss: f64,
        last_good: String,
    },

    #[error("config line {line}: unknown key `{key}`")]
    UnknownConfigKey { line: usize, key: String },

    #[error("config line {line}: cannot parse value `{value}` for `{key}`")]
    BadConfigValue {
        line: usize,
        key: String,
        value: String,
    },

    #[error("config line {line}: expected `key = value`")]
    BadConfigLine { line: usize },

    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("k-means: K = {k} must be between 1 and the number of points ({n})")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
