use std::path::PathBuf;

/// Anything a command can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] keysel_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("bad override {0:?}: expected section.key=value")]
    Override(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{failed} audit properties failed")]
    AuditFailed { failed: usize },
}

impl CliError {
    /// Stable name of the error class, for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(keysel_core::Error::InvalidConfig { .. }) => "invalid_config",
            CliError::Core(keysel_core::Error::ShapeMismatch { .. }) => "shape_mismatch",
            CliError::Core(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Config { .. } | CliError::Override(_) => "invalid_config",
            CliError::Format { .. } => "format",
            CliError::AuditFailed { .. } => "audit_failed",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> CliError {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
