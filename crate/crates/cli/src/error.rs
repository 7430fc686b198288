use thiserror::Error;

/// Errors of the experiment driver, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] tsrc_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 config error, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use tsrc_core::Error as E;
        match self {
            CliError::Config { .. } => 1,
            CliError::Data(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Partition { .. } => 1,
                E::Diverged { .. } | E::ZeroDictionary => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
