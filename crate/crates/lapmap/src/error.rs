use std::path::PathBuf;

/// Errors shared across the crate.
///
/// Loaders never panic on malformed input; every failure carries enough
/// location information (path, line, column) to act on.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected {expected}, got {actual}")]
    SizeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("{context}: input contains a non-finite value")]
    NonFinite { context: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("parameter `{name}` = {value} violates {constraint}")]
    ParamOutOfRange {
        name: &'static str,
        value: String,
        constraint: &'static str,
    },

    #[error("mask has no observed entries")]
    EmptySupport,

    #[error("eigensolver did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: row has {got} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("{path}:{line}: column {column}: `{token}` is not a number")]
    NonNumericCell {
        path: PathBuf,
        line: usize,
        column: usize,
        token: String,
    },

    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },

    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("{path}:{line}: id {id} out of range (valid: 1..={max})")]
    IdOutOfRange {
        path: PathBuf,
        line: usize,
        id: i64,
        max: usize,
    },

    #[error("train/test supports overlap at entry ({row}, {col})")]
    OverlappingSplit { row: usize, col: usize },

    #[error("unsupported report version {found} (supported: {supported})")]
    VersionMismatch { found: String, supported: u32 },
}

impl Error {
    pub(crate) fn size(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::SizeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, value: impl ToString, constraint: &'static str) -> Self {
        Error::ParamOutOfRange {
            name,
            value: value.to_string(),
            constraint,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
