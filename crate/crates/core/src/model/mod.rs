//! Speech encoder, phoneme text encoder and shared decoder.

mod config;
mod forward;
mod init;

pub use config::{ConvActivation, ModelConfig, ShareMode, SizePreset};
pub use forward::{label_smoothed_loss, pad_features, subsampled_length, Encoded, PaddedFeatures};
pub use init::{build_model, ParamBreakdown};

use numcore::{NumError, ParamStore, Scalar};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// A configuration and its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}
