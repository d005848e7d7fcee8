use cropseg_core::Error;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0}")]
    Config(String),

    #[error("gradient check failed for {failed} of {total} cases")]
    Gradcheck { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Gradcheck { .. } => EXIT_GRADCHECK,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::ConfigName { .. } => EXIT_CONFIG,
                Error::NonFinite { .. } => EXIT_NON_FINITE,
                _ => EXIT_DATA,
            },
        }
    }
}
