use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, label values).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); increase the diagonal regularization")]
    Singular { pivot: usize, value: f64 },

    #[error("region statistics unavailable: {0}")]
    StatsUnavailable(String),

    #[error("degenerate value range: min == max == {0}")]
    DegenerateRange(f64),

    #[error("format error in {what} at byte {offset}: {detail}")]
    Format {
        what: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("config error at {pointer}: {detail}")]
    Config { pointer: String, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(pointer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Singular { .. } | Error::Numeric(_) | Error::DegenerateRange(_) => 4,
            Error::Contract { .. } | Error::StatsUnavailable(_) => 5,
        }
    }

    /// Short machine-parsable category name printed alongside the exit code.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "io",
            4 => "numeric",
            _ => "data-contract",
        }
    }
}
