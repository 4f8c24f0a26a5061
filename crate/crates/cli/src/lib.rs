//! Command implementations behind the `lanetopo` binary.

use std::path::PathBuf;

pub mod commands;
pub mod config;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Output(String),
    Numerical { message: String, log: PathBuf },
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Output(_) | CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Output(m) => write!(f, "cannot write output: {m}"),
            CliError::Numerical { message, log } => {
                write!(f, "numerical failure: {message} (see {})", log.display())
            }
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<lanetopo::Error> for CliError {
    fn from(e: lanetopo::Error) -> Self {
        use lanetopo::Error as E;
        match e {
            E::Parse(_) => CliError::Input(e.to_string()),
            E::Io(_) => CliError::Output(e.to_string()),
            E::NonFinite { .. } | E::NonFiniteLoss { .. } => CliError::Numerical {
                message: e.to_string(),
                log: PathBuf::from("-"),
            },
            E::Invalid(_) | E::Generation(_) => CliError::Usage(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}
