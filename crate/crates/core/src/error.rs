use std::io;

use thiserror::Error;

pub type Result<T, E = QubeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QubeError {
    #[error("dimension name must not be empty")]
    EmptyDimensionName,

    #[error("invalid dimension name {0:?}: must not contain ',', '=', '/' or a newline")]
    InvalidDimensionName(String),

    #[error("dimension {dim:?} repeats{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicateDimension { dim: String, line: Option<usize> },

    #[error("malformed qube at {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("incompatible path {path}: {reason}")]
    IncompatiblePath { path: String, reason: String },

    #[error("range predicate on {dim:?} applied to a value of another type ({value})")]
    MixedTagRange { dim: String, value: String },

    #[error("invalid predicate for {dim:?}: {reason}")]
    InvalidPredicate { dim: String, reason: String },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("indentation error at line {line}: {message}")]
    Indent { line: usize, message: String },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("generated shape has {requested} leaves, cap is {cap}")]
    CapExceeded { requested: u64, cap: u64 },

    #[error("feature lies outside the grid: {0}")]
    OutOfBounds(String),

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("field {0:?} is not present in the store manifest")]
    UnknownField(String),

    #[error("corrupt field {field_index}: {reason}")]
    CorruptField { field_index: u32, reason: String },

    #[error("short read from store: {0}")]
    ShortRead(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl QubeError {
    pub(crate) fn malformed(path: impl Into<String>, reason: impl Into<String>) -> Self {
        QubeError::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        QubeError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        QubeError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
