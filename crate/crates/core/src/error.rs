use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    /// A prerequisite stage or artifact is missing or does not match.
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] drivesim::SimError),
    #[error(transparent)]
    Array(#[from] ndgrad::Error),
    #[error(transparent)]
    Es(#[from] cmaes::EsError),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dependency(_) => 3,
            Error::Numerical(_) => 4,
            Error::Es(cmaes::EsError::Config(_)) => 2,
            Error::Es(cmaes::EsError::Numerical(_)) => 4,
            Error::Sim(drivesim::SimError::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
