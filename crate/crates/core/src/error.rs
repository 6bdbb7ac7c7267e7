//! Crate-wide error type.

/// Errors raised by any foresthash operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated an operation's preconditions.
    #[error("validation: {0}")]
    Validation(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// A file did not match its expected on-disk format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A file carries a format version this build does not support.
    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    /// The CRC32 trailer did not match the file contents.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Corrupt { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
