use std::path::Path;

use thiserror::Error;

use crate::tensor_io::TensorIoError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    InvalidInput = 2,
    Localization = 3,
    Io = 4,
    Internal = 5,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("localization failed: {0}")]
    Localization(inkspot_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("internal invariant violated: {0}")]
    Internal(inkspot_core::Error),
    #[error(transparent)]
    Core(inkspot_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Config(_) => ExitCode::InvalidInput,
            Error::Localization(_) => ExitCode::Localization,
            Error::Io { .. } | Error::Tensor(_) | Error::Format { .. } => ExitCode::Io,
            Error::Internal(_) => ExitCode::Internal,
            Error::Core(e) => match e {
                inkspot_core::Error::ShapeMismatch { .. } | inkspot_core::Error::InvalidStack(_) => {
                    ExitCode::Io
                }
                _ => ExitCode::InvalidInput,
            },
        }
    }
}

impl From<inkspot_core::Error> for Error {
    fn from(e: inkspot_core::Error) -> Self {
        use inkspot_core::Error as E;
        match e {
            E::NoRegion | E::EmptyRegion => Error::Localization(e),
            E::ImaginaryResidue { .. } => Error::Internal(e),
            other => Error::Core(other),
        }
    }
}
