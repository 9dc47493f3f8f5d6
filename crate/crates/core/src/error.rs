use thiserror::Error;

/// Errors surfaced by the toolkit's public operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape violates an operation contract. Names the offending axis.
    #[error("shape error on axis `{axis}`: {message}")]
    Shape { axis: String, message: String },

    /// Argument outside its valid domain (negative temperature, bad rate, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or incomplete configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk data. Reports the byte offset where parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Dataset missing or unreadable.
    #[error("data error: {0}")]
    Data(String),

    /// NaN/Inf where finite values are required, or divergence during training.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Structural analysis of a model graph failed.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(axis: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape { axis: axis.into(), message: message.into() }
    }

    pub fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
