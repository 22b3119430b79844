use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration; `line` is 0 for command-line overrides.
    #[error("{}", config_message(*line, message))]
    Config { line: usize, message: String },

    #[error(transparent)]
    Core(#[from] qwitness::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A verification step did not meet its tolerance.
    #[error("check failed: {0}")]
    Check(String),
}

fn config_message(line: usize, message: &str) -> String {
    if line == 0 {
        format!("config: {message}")
    } else {
        format!("config line {line}: {message}")
    }
}

impl CliError {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        CliError::Config {
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 check failure, 2 configuration error, 3 numeric or runtime error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Core(qwitness::Error::InvalidParameter { .. }) => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}
