use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pec_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    ConfigLine { path: PathBuf, line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint field `{field}`: {message}")]
    Checkpoint { field: String, message: String },
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("architecture mismatch: {field} is {found} in the checkpoint but {expected} in the run config")]
    Architecture { field: String, found: String, expected: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Checkpoint {
            field: field.into(),
            message: message.into(),
        }
    }
}
