//! Audio front-end: PCM WAV input, log-mel features, global CMVN and
//! SpecAugment masking.

mod cmvn;
mod featfile;
mod mel;
mod specaug;
mod wav;

pub use cmvn::{apply_cmvn, fit_cmvn, invert_cmvn, CmvnStats, CMVN_EPS};
pub use featfile::{read_features, write_features, FEATURE_MAGIC};
pub use mel::{frame_count, log_mel, mel_center_frequencies, mel_filterbank, FeatureConfig};
pub use specaug::{spec_augment, SpecAugmentPolicy};
pub use wav::{parse_wav, read_wav, wav_bytes, write_wav, Waveform, SAMPLE_RATE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav: {0}")]
    Wav(String),
    #[error("audio has {samples} samples; at least {needed} are needed for one frame")]
    TooShort { samples: usize, needed: usize },
    #[error("cmvn: {0}")]
    Cmvn(String),
    #[error("feature file: {0}")]
    Format(String),
    #[error("feature config: {0}")]
    Config(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// `frames × dim` row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, AudioError> {
        if data.len() != frames * dim {
            return Err(AudioError::Format(format!(
                "{frames}x{dim} matrix needs {} values, got {}",
                frames * dim,
                data.len()
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f32 {
        self.data[frame * self.dim + coeff]
    }

    pub fn set(&mut self, frame: usize, coeff: usize, value: f32) {
        self.data[frame * self.dim + coeff] = value;
    }
}
