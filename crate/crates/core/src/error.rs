use thiserror::Error;

/// Errors produced anywhere in the filtering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition (bad box, bad shape, bad config).
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced non-finite values or an impossible factorization.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A text input row could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// A persisted file did not match its schema.
    #[error("format error in `{field}`: {msg}")]
    Format { field: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
