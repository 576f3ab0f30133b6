use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("empty partition `{name}`: no dates in [{start}, {end}]")]
    EmptyPartition {
        name: String,
        start: chrono::NaiveDate,
        end: chrono::NaiveDate,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error in {layer}: {message}")]
    Numeric { layer: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("negative implied variance {variance} (price term {price_term}, drift correction {correction})")]
    NegativeVariance {
        variance: f64,
        price_term: f64,
        correction: f64,
    },

    #[error("degenerate test: {0} (forecasts indistinguishable)")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("task {context}: {source}")]
    Task {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            layer: layer.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Task {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through task context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Argument(_) | Error::Config(_) | Error::Contract(_) => 1,
            Error::Numeric { .. } | Error::NegativeVariance { .. } | Error::Degenerate(_) => 3,
            _ => 2,
        }
    }
}
