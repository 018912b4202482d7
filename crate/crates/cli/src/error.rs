use std::fmt;
use std::process::ExitCode;

/// Failures mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// A check ran and found a mismatch or a tolerance breach. Exit 1.
    Failed(String),
    /// Bad flags, configuration or input files. Exit 2.
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Failed(_) => ExitCode::from(1),
            CliError::Usage(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failed(m) | CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl From<mpx_core::Error> for CliError {
    fn from(e: mpx_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
