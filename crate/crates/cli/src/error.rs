use std::fmt;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Unreadable or inconsistent input data.
    Input,
    /// Missing or invalid configuration.
    Config,
    /// A broken internal invariant.
    Internal,
}

impl Failure {
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::Input => 1,
            Failure::Config => 2,
            Failure::Internal => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: Failure, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub trait Classify<T> {
    fn input_err(self) -> Result<T, CliError>;
    fn config_err(self) -> Result<T, CliError>;
    fn internal_err(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(Failure::Input, e))
    }

    fn config_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(Failure::Config, e))
    }

    fn internal_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(Failure::Internal, e))
    }
}
