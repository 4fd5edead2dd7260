use std::fmt::Display;

/// Failures are split by whose fault they are, which decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, settings, manifest or input files.
    #[error("{0}")]
    Input(String),
    /// Inputs were fine but a computation could not finish.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn input(msg: impl Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn compute(msg: impl Display) -> Self {
        CliError::Compute(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

impl From<ubd::Error> for CliError {
    fn from(e: ubd::Error) -> Self {
        use ubd::Error::*;
        match e {
            Registration { .. } | AllReferencesFailed { .. } | AllPairsExcluded { .. } => {
                CliError::compute(e)
            }
            _ => CliError::input(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
