use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("all {0} trials failed numerically")]
    AllDiverged(usize),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: impl Into<std::io::Error>) -> Self {
        CliError::Io {
            path: path.into(),
            source: source.into(),
        }
    }

    pub fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        CliError::io(path, std::io::Error::other(e))
    }

    /// Process exit status: 2 config, 3 every trial diverged, 4 I/O, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllDiverged(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<zobilevel::Error> for CliError {
    fn from(e: zobilevel::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
