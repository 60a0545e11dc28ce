use thiserror::Error;

#[derive(Debug, Error)]
pub enum EsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Array(#[from] ndgrad::Error),
}

pub type Result<T> = std::result::Result<T, EsError>;
