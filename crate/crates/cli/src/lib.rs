//! Command-line front end and HTTP service for split auditing.

pub mod commands;
pub mod data;
pub mod server;

use splitlens_core::splits::Violation;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: the input parsed but describes an invalid split or search.
    Validation {
        message: String,
        violations: Vec<Violation>,
    },
    /// Exit code 1: I/O or parse failure.
    Failure(anyhow::Error),
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation {
            message: message.into(),
            violations: Vec::new(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation { message, violations } => {
                write!(f, "{message}")?;
                for v in violations {
                    write!(f, "\n  - {v}")?;
                }
                Ok(())
            }
            CliError::Failure(e) => write!(f, "{e:#}"),
        }
    }
}
