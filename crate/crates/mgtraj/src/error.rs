use std::fmt;
use std::io;
use std::path::Path;

/// Failure of a command, split by who has to fix it.
#[derive(Debug)]
pub enum AppError {
    /// Bad configuration, flags or inputs named by the configuration.
    Config(String),
    /// Failure while running a valid configuration.
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        let message = format!("{}: {err}", path.display());
        if err.kind() == io::ErrorKind::NotFound {
            Self::Config(message)
        } else {
            Self::Runtime(message)
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<mgtraj_core::Error> for AppError {
    fn from(err: mgtraj_core::Error) -> Self {
        use mgtraj_core::Error as E;
        match err {
            E::Parse { .. } | E::Divergence { .. } => Self::Runtime(err.to_string()),
            _ => Self::Config(err.to_string()),
        }
    }
}
