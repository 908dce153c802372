use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: CSV error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: duplicate row for {key} at line {line} (first seen at line {first_line})")]
    DuplicateRow {
        path: PathBuf,
        key: String,
        first_line: u64,
        line: u64,
    },

    #[error("{path}, line {line}: {message}")]
    InvalidRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid country code `{0}` (expected three uppercase ASCII letters)")]
    InvalidCode(String),

    #[error("observation grid is empty: {0}")]
    EmptyGrid(String),

    #[error("imputation needs at least {needed} donor countries with observed scores, found {available}")]
    InsufficientDonors { needed: usize, available: usize },

    #[error("country {0} has no centroid but needs one for nearest-neighbour imputation")]
    MissingCentroid(String),

    #[error("no Hofstede score for origin {origin} (dimension {dimension}) which has positive migrant stock")]
    MissingScore { origin: String, dimension: String },

    #[error("unknown-origin migrants in {dest} ({year}) cannot be redistributed: no positive emigrant totals")]
    NoEmigrants { dest: String, year: i32 },

    #[error("{0}")]
    Domain(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("equation {0} has zero total variance")]
    ZeroVariance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Domain(_) | Error::Json(_))
    }
}
