use qvi_core::error::QviError;
use serde::Serialize;

/// Failures that stop a command before its checks are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn from_core(e: QviError) -> Self {
        match e {
            QviError::Config(m) => CliError::Config(m),
            QviError::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<QviError> for CliError {
    fn from(e: QviError) -> Self {
        CliError::from_core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
