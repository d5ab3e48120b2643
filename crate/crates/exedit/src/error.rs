use std::path::PathBuf;

/// Errors surfaced by the I/O, configuration and command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] exedit_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category used in command-line diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Checkpoint(_) => "checkpoint",
            Error::Image { .. } => "image",
            Error::Core(e) => match e {
                exedit_core::Error::Validation(_) => "validation",
                exedit_core::Error::Config(_) => "config",
                exedit_core::Error::Variant(_) => "usage",
                exedit_core::Error::NonFinite { .. } => "numeric",
            },
        }
    }

    /// Process exit status for this error; never 0.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "parse" => 5,
            "image" => 6,
            "checkpoint" => 7,
            "validation" => 8,
            "numeric" => 9,
            _ => 1,
        }
    }
}
