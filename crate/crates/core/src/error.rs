use thiserror::Error;

/// Errors raised across the toolkit.
///
/// `Parse`, `Validation`, `Usage` and `Config` are caller mistakes; `Io` and
/// `Json` wrap the underlying failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad input rather than an internal failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Usage(_) | Error::Config(_) => true,
            Error::Io(e) => matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ),
            Error::Json(e) => e.is_syntax() || e.is_data() || e.is_eof(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
