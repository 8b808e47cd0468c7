use std::path::PathBuf;

use crate::search::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("layer {layer}: expected {expected} weights, found {found}")]
    SizeMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("layer {layer}: non-finite value at index {index}")]
    NonFinite { layer: usize, index: usize },

    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("b_max must be at least 2, got {0}")]
    InvalidBitWidth(u32),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("problem dimension {dim} exceeds the enumeration bound {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("empty solution list")]
    EmptySolutions,

    #[error("variable index is inconsistent: {0}")]
    CorruptIndex(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("manifest describes group statistics only; raw weights are unavailable")]
    StatsOnly,

    #[error("accuracy never crossed the threshold after {cap} steps")]
    NoThresholdCrossing { cap: u32 },

    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
