use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] taskcode::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} grid points failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical aborts, 4 for partial
    /// sweeps, 1 for I/O failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ReadConfig { .. } | CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Partial { .. } => 4,
            CliError::Io(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
