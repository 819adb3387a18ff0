use mid_core::MidError;
use thiserror::Error;

/// CLI failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<MidError> for CliError {
    fn from(e: MidError) -> Self {
        let msg = e.to_string();
        match e {
            MidError::Config(inner) => CliError::Config(inner),
            MidError::NonFinite(_) | MidError::Internal(_) => CliError::Numeric(msg),
            MidError::Shape { .. }
            | MidError::BadMagic { .. }
            | MidError::UnsupportedVersion { .. }
            | MidError::Truncated(_)
            | MidError::Integrity { .. }
            | MidError::Malformed(_)
            | MidError::Io(_) => CliError::Data(msg),
        }
    }
}
