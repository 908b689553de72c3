use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pastiche_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("unknown content id `{0}`")]
    UnknownContent(String),
    #[error("no style image recorded for `{0}`; pass --style {0}=<image>")]
    NoStyleImage(String),
    #[error("{0}")]
    BadRequest(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::ConfigFile { .. } => "config",
            CliError::UnknownContent(_) => "unknown-content",
            CliError::NoStyleImage(_) => "no-style-image",
            CliError::BadRequest(_) => "bad-request",
        }
    }

    /// The one-line form printed on failure: `error[kind]: message`.
    pub fn line(&self) -> String {
        let message = self.to_string().replace('\n', " ");
        format!("error[{}]: {message}", self.kind())
    }
}
