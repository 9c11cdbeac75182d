use std::path::PathBuf;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("size guard: {0}")]
    Size(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable short name of the variant, used for exit codes and FFI status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Integrity(_) => "integrity",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::Precondition(_) => "precondition",
            Error::Numeric(_) => "numeric",
            Error::NotFound(_) => "not_found",
            Error::Domain(_) => "domain",
            Error::Size(_) => "size",
        }
    }
}
