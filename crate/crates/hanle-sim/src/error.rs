use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid physical input (quantum numbers, forbidden transition, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad configuration file or override.
    #[error("config error: {0}")]
    Config(String),

    /// Solver or quadrature failure (singular system, non-finite value).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// No central structure could be extracted from a resonance curve.
    #[error("extraction error: {0}")]
    Extraction(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config/domain, 3 numeric, 4 extraction.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) => 2,
            Error::Numeric(_) => 3,
            Error::Extraction(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
