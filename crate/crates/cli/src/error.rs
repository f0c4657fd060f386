use dipa::DipaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] DipaError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Process exit status for each failure class.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const TRAINING: i32 = 4;
    pub const INTERNAL: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(e) => match e {
                DipaError::Config(_) => exit::CONFIG,
                DipaError::MalformedInstance(_)
                | DipaError::Parse { .. }
                | DipaError::Data(_)
                | DipaError::EmptyDataset
                | DipaError::Io(_)
                | DipaError::Json(_)
                | DipaError::Csv(_) => exit::DATA,
                DipaError::Divergence { .. } => exit::TRAINING,
                DipaError::Autodiff(_) => exit::INTERNAL,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
