use std::io;
use std::path::PathBuf;

use llc_lab_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 2,
            LabError::Config(_) | LabError::Core(CoreError::Config(_)) => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> LabError {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }
}

impl From<llc_lab_core::memsim::MemError> for LabError {
    fn from(e: llc_lab_core::memsim::MemError) -> Self {
        LabError::Core(e.into())
    }
}

impl From<llc_lab_core::memsim::ConfigError> for LabError {
    fn from(e: llc_lab_core::memsim::ConfigError) -> Self {
        LabError::Core(e.into())
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
