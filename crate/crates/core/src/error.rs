use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand lengths or shapes disagree, or a transform length is not a power of two.
    #[error("size error: {0}")]
    Size(String),

    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configured resource limit (dense limit, monomial budget) would be exceeded.
    #[error("resource error: {what} requires {requested}, limit is {limit}")]
    Resource {
        what: String,
        requested: u128,
        limit: u128,
    },

    /// The requested accuracy cannot be met with the available arithmetic.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A normalizer entry was non-positive or too small to divide by.
    #[error("normalization error: row {row} has D = {value:e}")]
    Normalization { row: usize, value: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV or manifest content.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Size(_) => "size",
            Error::Domain(_) => "domain",
            Error::Resource { .. } => "resource",
            Error::Configuration(_) => "configuration",
            Error::Normalization { .. } => "normalization",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
