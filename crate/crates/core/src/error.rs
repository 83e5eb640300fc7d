use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("non-finite feature at iteration {iteration}")]
    NonFiniteFeature { iteration: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Blob(#[from] BlobError),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("calibration profile: {0}")]
    Profile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failure kinds when decoding a weight blob.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlobError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported blob version {major}.{minor}")]
    UnsupportedVersion { major: u16, minor: u16 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("blob truncated at byte {0}")]
    Truncated(usize),
    #[error("unsupported numeric width {0}")]
    Width(u8),
    #[error("invalid value: {0}")]
    Value(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
