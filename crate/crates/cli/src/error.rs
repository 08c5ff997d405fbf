use thiserror::Error;

/// Failure classes of a run, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }
}

impl From<cmr_core::Error> for CliError {
    fn from(e: cmr_core::Error) -> Self {
        use cmr_core::Error as E;
        match e {
            E::UnknownColumn(_) | E::Data(_) | E::Dimension(_) => CliError::Data(e.to_string()),
            _ => CliError::Estimation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
