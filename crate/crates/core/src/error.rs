use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A column (0-based) of a supposedly full-rank factor is numerically
    /// dependent on the preceding ones.
    #[error("rank deficient: column {index} has |R_ii| = {magnitude:e} below tolerance {tolerance:e}")]
    RankDeficient {
        index: usize,
        magnitude: f64,
        tolerance: f64,
    },

    #[error("degenerate selection: {independent} independent columns, need {required}")]
    DegenerateSelection { independent: usize, required: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numerical(_) => "numerical",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::DegenerateSelection { .. } => "degenerate-selection",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 1 for input problems, 2 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::RankDeficient { .. } | Error::DegenerateSelection { .. } => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
