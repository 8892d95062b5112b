use std::fmt;

use thiserror::Error;

use crate::diagnostics::Violation;

/// One problem found while parsing or validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {}: {}", line, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("invariant violation: {}", format_violations(.0))]
    Invariant(Vec<Violation>),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            Error::Solver(_) | Error::Io(_) => 3,
            Error::Config(_) | Error::Argument(_) => 4,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue {
            line: None,
            message: message.into(),
        }])
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {}", i))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
