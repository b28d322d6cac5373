use std::path::PathBuf;

/// Error type shared across the crate.
///
/// Variants map onto the CLI exit-code classes: usage/config/domain errors
/// are caller mistakes, format errors come from on-disk containers, and
/// numeric errors signal a diverged computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {blob} at byte {offset}: {msg}")]
    Format {
        blob: String,
        offset: u64,
        msg: String,
    },

    #[error("numeric failure in {layer}: {msg}")]
    Numeric { layer: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 2 caller error, 3 malformed data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } => 3,
            Error::Numeric { .. } => 4,
            Error::Dimension(_)
            | Error::Usage(_)
            | Error::Domain(_)
            | Error::Config(_)
            | Error::Io { .. } => 2,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(blob: impl Into<String>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            blob: blob.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
