use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error at row {row}, column {column}: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate row for customer {customer}, category {category}, date {date}")]
    Duplicate {
        customer: u32,
        category: String,
        date: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    /// Bad configuration. `path` is the dotted key of the offending field, if known.
    #[error("configuration error{}: {message}", path.as_ref().map(|p| format!(" at `{p}`")).unwrap_or_default())]
    Config {
        path: Option<String>,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("instance too large: {0}")]
    ResourceGuard(String),

    #[error("missing input files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingInputs(Vec<PathBuf>),

    #[error("search failed: all {0} trials diverged")]
    SearchFailed(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            message: message.into(),
        }
    }

    pub fn config_at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class name, used by the CLI error line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Validation { .. } => "validation",
            Error::Duplicate { .. } => "duplicate",
            Error::NotFound(_) => "not_found",
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Protocol(_) => "protocol",
            Error::Policy(_) => "policy",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::ResourceGuard(_) => "resource_guard",
            Error::MissingInputs(_) => "missing_inputs",
            Error::SearchFailed(_) => "search_failed",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
