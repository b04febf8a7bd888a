use std::io;

use satjam_cnn::CnnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    /// A run finished but missed its threshold, or an expected run is absent.
    #[error("acceptance: {0}")]
    Acceptance(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const ACCEPTANCE: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Format(_) => exit::FORMAT,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
            CliError::Other(_) => exit::OTHER,
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<satjam_core::Error> for CliError {
    fn from(e: satjam_core::Error) -> Self {
        use satjam_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Io(source) => CliError::io("dataset", source),
            E::Format(m) => CliError::Format(m),
            E::Json(j) => CliError::Format(j.to_string()),
            other @ E::SizeMismatch { .. } => CliError::Format(other.to_string()),
        }
    }
}

impl From<CnnError> for CliError {
    fn from(e: CnnError) -> Self {
        match e {
            CnnError::Config(m) => CliError::Config(m),
            CnnError::Io(source) => CliError::io("checkpoint", source),
            CnnError::Format(m) => CliError::Format(m),
            CnnError::Data(d) => d.into(),
            other @ CnnError::Shape { .. } => CliError::Format(other.to_string()),
            CnnError::State(m) => CliError::Other(m),
        }
    }
}
