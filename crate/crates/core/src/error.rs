use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
///
/// Variants are grouped by category; [`Error::category`] yields the short tag
/// the command-line front end prints before the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("value cannot be encoded: {0}")]
    Encoding(String),
    #[error("index out of range: {0}")]
    Bounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("synthetic volume generation failed: {0}")]
    Generation(String),
    #[error("consistency mode error: {0}")]
    Mode(String),
    #[error("object {0} is absent from the reference label map")]
    EmptyReference(u32),
    #[error("recurrent state error: {0}")]
    State(String),
    #[error("reference label map has no foreground objects")]
    Seed,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("input too large for exhaustive evaluation: {0}")]
    SizeGuard(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("non-finite loss at epoch {epoch}, step {step} (diagnostics in {dump})")]
    NonFiniteLoss { epoch: usize, step: usize, dump: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Wraps the error with a human readable context prefix.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Storage { .. } => "storage",
            Error::Format(_) => "format",
            Error::Encoding(_) => "encoding",
            Error::Bounds(_) => "bounds",
            Error::Shape(_) => "shape",
            Error::Generation(_) => "generation",
            Error::Mode(_) => "mode",
            Error::EmptyReference(_) => "empty-reference",
            Error::State(_) => "state",
            Error::Seed => "seed",
            Error::UndefinedMetric(_) => "metric",
            Error::SizeGuard(_) => "size-guard",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::NonFiniteLoss { .. } => "training",
            Error::Usage(_) => "usage",
            Error::Context { source, .. } => source.category(),
        }
    }
}
