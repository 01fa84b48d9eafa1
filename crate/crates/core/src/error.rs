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

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("manifest line {line}: unknown group label {label:?}")]
    UnknownGroup { line: usize, label: String },

    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("bad embeddings magic: expected \"PBEMBED1\"")]
    BadMagic,

    #[error("row count mismatch: expected {expected}, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("truncated embeddings payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("invalid embedding shape: {0}")]
    Shape(String),

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },

    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid protocol: {0}")]
    Protocol(String),

    #[error("probe and gallery sets overlap at image {0:?}")]
    OverlappingRoles(String),

    #[error("selection needs k >= 1")]
    ZeroK,

    #[error("stream yielded {seen} scores, fewer than k = {k}")]
    StreamTooShort { k: usize, seen: u64 },

    #[error("non-finite score in stream")]
    NonFiniteScore,

    #[error("cannot merge selections with different k ({0} vs {1})")]
    MismatchedK(usize, usize),

    #[error("no selection states to merge")]
    NothingToMerge,

    #[error("empty positive set")]
    EmptyPositives,

    #[error("empty negative stream")]
    EmptyNegatives,

    #[error("negative stream yielded {seen} scores but n_negative = {expected}")]
    NegativeCountMismatch { expected: u64, seen: u64 },

    #[error("fpr target {0} outside (0, 1)")]
    FprTarget(f64),

    #[error("invalid margin config: {0}")]
    MarginConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("invalid synthetic config: {0}")]
    SynConfig(String),

    #[error("oracle input too large: {n} images (limit {limit})")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("latency measurement: {0}")]
    Measurement(String),

    #[error("extractor emitted dim {emitted}, declared dim {declared}")]
    ExtractorDim { declared: usize, emitted: usize },

    #[error("extractor failed on input {index}: {message}")]
    Extractor { index: usize, message: String },

    #[error("invalid rules: {0}")]
    Rules(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
