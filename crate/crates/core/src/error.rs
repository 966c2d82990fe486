use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the digitization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("malformed probability map: {0}")]
    Format(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("segmentation ingestion failed: {0}")]
    Ingestion(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("perspective estimation failed: {0}")]
    Perspective(String),
    #[error("grid spacing estimation failed (fit score {score:.3})")]
    Spacing { score: f64 },
    #[error("layout identification failed: {0}")]
    Layout(String),
    #[error("trace extraction failed: {0}")]
    Trace(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("SNR undefined: reference signal has zero power")]
    UndefinedSnr,
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier written into run reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Decode(_) => "decode",
            Error::Format(_) => "format",
            Error::InvalidInput(_) => "invalid-input",
            Error::Ingestion(_) => "ingestion",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::Perspective(_) => "perspective",
            Error::Spacing { .. } => "spacing",
            Error::Layout(_) => "layout",
            Error::Trace(_) => "trace",
            Error::Alignment(_) => "alignment",
            Error::UndefinedSnr => "undefined-snr",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
