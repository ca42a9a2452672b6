use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] np2m2::Error),
    #[error("{0}")]
    Audit(String),
    #[error("{failed} of {total} runs failed; completed traces were kept")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub(crate) fn with_path(self, p: &std::path::Path) -> Self {
        match self {
            CliError::Config { line, message, .. } => CliError::Config {
                path: p.to_path_buf(),
                line,
                message,
            },
            other => other,
        }
    }

    /// Process exit status: 2 for bad input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Argument(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
