use aplat_core::{AnalysisError, ForcingError, IntegrationError, LatticeError, NonlinearityError};

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation, unreadable or invalid config, unwritable output.
    #[error("config error: {0}")]
    Config(String),
    /// The integrator or an estimate broke down on valid input.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<IntegrationError> for CliError {
    fn from(e: IntegrationError) -> Self {
        use IntegrationError::*;
        match e {
            InvalidParams(_) | InvalidConfig(_) | InitialOutsideWindow { .. } | BadSpan | NoContraction(_) => {
                Self::Config(e.to_string())
            }
            Lattice(inner) => inner.into(),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Integration(inner) => inner.into(),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::Overflow => Self::Numerical(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<NonlinearityError> for CliError {
    fn from(e: NonlinearityError) -> Self {
        match e {
            NonlinearityError::NonFinite { .. } => Self::Numerical(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<ForcingError> for CliError {
    fn from(e: ForcingError) -> Self {
        Self::Config(e.to_string())
    }
}
