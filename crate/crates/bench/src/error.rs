use std::path::PathBuf;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] pnlk::Error),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{0}")]
    Usage(String),
}

/// Names the file an I/O failure from the core library was about.
pub fn at_path<T>(path: &std::path::Path, r: pnlk::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        pnlk::Error::Io(io) => BenchError::Io(path.to_path_buf(), io),
        other => BenchError::Core(other),
    })
}
