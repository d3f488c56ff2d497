use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("instance too large for {solver}: n = {n}, cap = {cap}")]
    TooLarge {
        solver: &'static str,
        n: usize,
        cap: usize,
    },

    #[error("oracle inconsistency: cost {cost} is below optimum {optimal}")]
    OracleInconsistency { cost: f64, optimal: f64 },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported TSPLIB format: {0}")]
    UnsupportedFormat(String),

    #[error("TSPLIB parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
