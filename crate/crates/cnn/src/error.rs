use thiserror::Error;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] satjam_core::Error),
}

pub type Result<T> = std::result::Result<T, CnnError>;

pub(crate) fn shape_err<T>(what: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Result<T> {
    Err(CnnError::Shape {
        what,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    })
}
