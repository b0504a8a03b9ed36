use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::layers::LayerError;
use crate::mask::MaskError;
use crate::model::{LoadError, ModelError};
use crate::training::TrainError;

/// Two shapes that were required to agree but did not.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
pub struct ShapeError {
    pub context: &'static str,
    pub expected: (usize, usize),
    pub actual: (usize, usize),
}

impl ShapeError {
    pub fn new(context: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Self {
        Self {
            context,
            expected,
            actual,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
