use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {actual}")]
    Dimension {
        field: String,
        expected: usize,
        actual: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite log density at unconstrained point {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient successful replicates: {successes} of {requested} (minimum {minimum})")]
    InsufficientReplicates {
        successes: usize,
        requested: usize,
        minimum: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(field: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            field: field.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Domain(_) => "domain",
            Error::Argument(_) => "argument",
            Error::NonFinite { .. } => "non_finite",
            Error::FitFailure(_) => "fit_failure",
            Error::Unsupported(_) => "unsupported",
            Error::InsufficientReplicates { .. } => "insufficient_replicates",
            Error::Parse(_) => "parse",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
