use std::path::PathBuf;

use thiserror::Error;

use crate::data::ImageError;
use crate::network::CheckpointError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid ablation spec: {switch}: {msg}")]
    Ablation { switch: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Metrics(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
