use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] vortexmf_core::Error),
    #[error("unknown verification suite {0:?}")]
    UnknownSuite(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
