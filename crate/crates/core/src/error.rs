use thiserror::Error;

use crate::certificates::CertificateError;
use crate::dataset::DatasetError;
use crate::fewshot::FewShotError;
use crate::geometry::GeometryError;
use crate::multitask::OrthoError;
use crate::synthetic::SyntheticError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error, wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for usage and validation problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json(_) => 1,
            Error::Dataset(DatasetError::Io { source, .. })
                if source.kind() != std::io::ErrorKind::NotFound =>
            {
                1
            }
            _ => 2,
        }
    }
}
