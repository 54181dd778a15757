use std::path::Path;

use blurwarp_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io_at(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Io(format!("{}: {err}", path.display()))
    }

    /// True for errors rooted in configuration or geometry.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Tensor(TensorError::Config { .. }))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Tensor(TensorError::Io(_)))
    }
}
