//! Joint optimization: alternating speech and text batches, checkpoints,
//! averaging and warm starts from pretrained components.

mod batching;
mod checkpoint;
mod data;
mod train;

pub use batching::{make_batches, Batch};
pub use checkpoint::{average_checkpoints, init_from_pretrained, Checkpoint, OptimizerState, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{
    load_features, read_manifest, read_text_corpus, write_manifest, ManifestRow, SourceEncoder, SpeechItem, TextCorpus, TextItem, MANIFEST_HEADER,
};
pub use train::{train, EpochSummary, LogRecord, StepTask, TrainOutcome};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, SpecAugmentPolicy};
use crate::model::ModelError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("training diverged at step {step} ({task} batch): {reason}")]
    Diverged { step: u64, task: &'static str, reason: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("{path}:{line}: {reason}")]
    Data { path: String, line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimaryTask {
    #[default]
    Asr,
    St,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextTask {
    None,
    /// Masked spoken-form input, clean text output.
    #[default]
    Denoise,
    /// Source-language input, target-language output.
    Mt,
    /// Unmasked spoken-form input.
    Passthrough,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRepr {
    #[default]
    Phoneme,
    Character,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskMode {
    pub primary_task: PrimaryTask,
    pub text_task: TextTask,
    pub mask_ratio: f64,
    pub text_input_repr: InputRepr,
}

impl Default for TaskMode {
    fn default() -> Self {
        Self {
            primary_task: PrimaryTask::Asr,
            text_task: TextTask::Denoise,
            mask_ratio: 0.2,
            text_input_repr: InputRepr::Phoneme,
        }
    }
}

impl TaskMode {
    pub fn speech_only() -> Self {
        Self {
            text_task: TextTask::None,
            ..Self::default()
        }
    }

    /// Fraction of source tokens replaced by `<NOISE>` on text batches.
    pub fn effective_mask_ratio(&self) -> f64 {
        match self.text_task {
            TextTask::Denoise => self.mask_ratio,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(TrainError::Config(format!("mask_ratio {} outside [0, 1]", self.mask_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Cap on padded frames (items × longest item) per speech batch.
    pub speech_batch_frames: usize,
    /// Cap on padded source tokens per text batch.
    pub text_batch_tokens: usize,
    pub lr: f64,
    /// Linear warmup length in steps; 0 starts at full rate.
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub spec_augment: SpecAugmentPolicy,
    pub checkpoint_dir: Option<PathBuf>,
    pub average_last: usize,
    pub init_encoder_ckpt: Option<PathBuf>,
    pub init_decoder_ckpt: Option<PathBuf>,
    /// Continue from a per-epoch checkpoint.
    pub resume_from: Option<PathBuf>,
    /// JSON-lines step log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            speech_batch_frames: 40_000,
            text_batch_tokens: 20_000,
            lr: 1e-3,
            warmup_steps: 4000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            seed: 1,
            spec_augment: SpecAugmentPolicy::ld(),
            checkpoint_dir: None,
            average_last: 10,
            init_encoder_ckpt: None,
            init_decoder_ckpt: None,
            resume_from: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.speech_batch_frames == 0 || self.text_batch_tokens == 0 {
            return Err(TrainError::Config("batch budgets must be positive".into()));
        }
        if self.average_last == 0 {
            return Err(TrainError::Config("average_last must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        self.spec_augment.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> numcore::AdamConfig {
        numcore::AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate for 0-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Mixes a run seed with a purpose tag and counters into an independent
/// stream seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for x in [a, b] {
        z = z.wrapping_add(x.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
