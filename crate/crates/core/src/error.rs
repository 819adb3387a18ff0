use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum MidError {
    /// A tensor did not have the shape an operation requires.
    #[error("{context}: expected shape {expected}, got {actual:?}")]
    Shape {
        context: String,
        expected: String,
        actual: Vec<usize>,
    },

    /// Invalid configuration or argument value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Broken internal contract, e.g. a cache passed to the wrong layer.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("integrity check failed: stored checksum {stored:#018x}, computed {computed:#018x}")]
    Integrity { stored: u64, computed: u64 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MidError>;

impl MidError {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: &[usize]) -> Self {
        MidError::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.to_vec(),
        }
    }
}
