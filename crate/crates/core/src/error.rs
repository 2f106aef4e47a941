use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent arguments (dimension mismatch, bad index set, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Request exceeds a fixed memory guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Binary or text payload does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Numerically unusable data, e.g. a non-PSD exact Gram matrix.
    #[error("data error: {0}")]
    Data(String),

    /// Problem is well formed but has no meaningful solution (single-class labels,
    /// vanishing Mercer mode).
    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }

    /// Wraps the error with a pipeline stage tag, keeping its kind.
    pub fn stage(self, stage: &str) -> Self {
        match self {
            Error::Input(m) => Error::Input(format!("[{stage}] {m}")),
            Error::Capacity(m) => Error::Capacity(format!("[{stage}] {m}")),
            Error::Format(m) => Error::Format(format!("[{stage}] {m}")),
            Error::Data(m) => Error::Data(format!("[{stage}] {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("[{stage}] {m}")),
            other => other,
        }
    }
}
