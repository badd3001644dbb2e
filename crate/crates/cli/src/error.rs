use std::path::PathBuf;

/// Everything a command can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] sop_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sop_core::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e {
                E::Io(_) | E::Parse(_) | E::Png(_) => 3,
                E::Domain(_) => 4,
                E::InvalidArgument(_)
                | E::DimensionMismatch(_)
                | E::Unsampleable
                | E::NoSurfaceCoverage
                | E::NothingToShadow => 2,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
