use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image extents do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation parameter is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The call sequence or input state is wrong (e.g. double preprocessing).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    /// A metric received values outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("transfer error: offending slots [{}]", .0.join(", "))]
    Transfer(Vec<String>),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Phase {
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

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the phase it came from.
    pub fn in_phase(self, context: impl Into<String>) -> Self {
        Error::Phase {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Stable short identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Parameter(_) => "parameter",
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Transfer(_) => "transfer",
            Error::Ingestion { .. } => "ingestion",
            Error::Training { .. } => "training",
            Error::Format(_) => "format",
            Error::Phase { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
