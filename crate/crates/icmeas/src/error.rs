use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}{source}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Toml {
        path: Option<PathBuf>,
        source: toml::de::Error,
    },

    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: icmeas_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("threshold check failed: {0}")]
    Threshold(String),
}

impl HarnessError {
    /// 2 for configuration and usage errors, 3 for threshold failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => 2,
            HarnessError::Threshold(_) => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, HarnessError>;
}

impl<T> Context<T> for Result<T, icmeas_core::Error> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Core {
            context: context(),
            source,
        })
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
