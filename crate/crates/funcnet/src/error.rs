use std::path::PathBuf;

/// Errors of the file formats, configuration and commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] funcnet_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed input text; `row` and `column` are 1-based.
    #[error("{origin}: row {row}, column {column}: {message}")]
    Parse {
        origin: String,
        row: usize,
        column: usize,
        message: String,
    },
    /// Well-formed input that breaks a format rule.
    #[error("{0}")]
    Format(String),
    /// A bad configuration key, value or flag.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `2` for usage and configuration mistakes, `1` for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
