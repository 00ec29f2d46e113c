use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] rislab::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 = bad configuration or input, 3 = training diverged, 4 = I/O.
    pub fn exit_code(&self) -> i32 {
        use rislab::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 4,
            Self::Core(e) => match e {
                E::Diverged { .. } => 3,
                E::Io(_) | E::Csv(_) => 4,
                E::NonFiniteChannel | E::NumericalSupport { .. } | E::CacheMismatch(_) => 1,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
