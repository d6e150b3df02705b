use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] carbonpp::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for bad invocations, 3 for unreadable or inconsistent data, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        use carbonpp::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Write { .. } | CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::Invalid { .. } => 2,
                E::Numerical(_) => 4,
                _ => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
