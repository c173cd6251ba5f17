use std::process::ExitCode;

use stable_gvar::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        })
    }

    /// Classifies a core error raised while reading or checking inputs.
    pub fn data(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) => CliError::Config(e.to_string()),
            CoreError::Io(_)
            | CoreError::Csv(_)
            | CoreError::Json(_)
            | CoreError::InvalidData(_)
            | CoreError::Dimension(_) => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) | CoreError::Dimension(_) => {
                CliError::Config(e.to_string())
            }
            CoreError::InvalidData(_) | CoreError::Csv(_) | CoreError::Json(_) => {
                CliError::Data(e.to_string())
            }
            CoreError::Io(io) => CliError::Io(io),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
