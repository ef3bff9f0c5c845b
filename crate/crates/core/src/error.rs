use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {message}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("size mismatch: header expects {expected} values, raw file holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite or negative attenuation at voxel {index}")]
    InvalidValue { index: usize },
    #[error("unknown material label {0}")]
    UnknownLabel(u8),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("point lies at or behind the x-ray source")]
    BehindSource,
    #[error("trajectory does not intersect the mesh")]
    MissesMesh,
    #[error("phase regression from {from} to {to}")]
    PhaseRegression { from: String, to: String },
    #[error("insertion {0:.3} mm outside [0, cannula length]")]
    InsertionOutOfRange(f64),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("no plan available for {0}")]
    MissingPlan(String),
    #[error("png codec: {0}")]
    Png(String),
    #[error("network error on {addr}")]
    Network {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol error {code}: {message}")]
    Protocol { code: String, message: String },
}

/// Coarse classification used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Contract,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Network { .. } => ErrorKind::Io,
            _ => ErrorKind::Contract,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
