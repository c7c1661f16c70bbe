use std::fmt;
use std::path::Path;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Violation(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Violation(_) => 5,
            CliError::Data(_) => 6,
            CliError::Divergence(_) => 7,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn data(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Config(m) => ("config", m),
            CliError::Io(m) => ("io", m),
            CliError::Violation(m) => ("protocol violation", m),
            CliError::Data(m) => ("data", m),
            CliError::Divergence(m) => ("divergence", m),
        };
        write!(f, "{kind} error: {msg}")
    }
}

pub type CliResult<T> = Result<T, CliError>;
