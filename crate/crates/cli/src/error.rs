use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or inconsistent input; exit code 2.
    #[error("{0}")]
    Input(String),

    /// Output was written but is degraded; exit code 3.
    #[error("{0}")]
    Degraded(String),

    #[error(transparent)]
    Core(#[from] stereofuse::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Degraded(_) => 3,
            CliError::Core(stereofuse::Error::InsufficientData { .. })
            | CliError::Core(stereofuse::Error::DegenerateInput(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))
}

/// Prefixes an error with the file it came from.
pub fn in_file<T>(path: &Path, r: stereofuse::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        stereofuse::Error::Dimension(_) => CliError::Core(e),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}
