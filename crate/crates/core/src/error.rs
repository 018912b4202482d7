use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} where a finite quantization input is required")]
    NonFinite { value: f64 },

    #[error("value {value} does not fit in a 64-bit integer after rounding")]
    IntegerOverflow { value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid quantization scheme: {0}")]
    Scheme(String),

    #[error("group size {group_size} does not divide reduction length {k}")]
    GroupSize { group_size: usize, k: usize },

    #[error("granularity mismatch: expected {expected}, found {found}")]
    Granularity { expected: String, found: String },

    #[error("operand format mismatch for {kind} PE: {detail}")]
    OperandFormat { kind: String, detail: String },

    #[error("PE kind {0} has no functional shift&add model")]
    NoFunctionalModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("SNR is undefined: {0}")]
    SnrUndefined(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite sample {token:?} at row {row}, column {col} of {path}")]
    NonFiniteSample {
        path: PathBuf,
        row: usize,
        col: usize,
        token: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}
