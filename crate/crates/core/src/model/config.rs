use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    S,
    M,
    L,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    #[default]
    None,
    /// Text encoder layers alias the top speech encoder layers.
    TieTop6,
}

/// Nonlinearity between the two subsampling convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvActivation {
    #[default]
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub speech_layers: usize,
    pub text_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub share_mode: ShareMode,
    pub phoneme_vocab_size: usize,
    pub subword_vocab_size: usize,
    pub size_preset: Option<SizePreset>,
    pub input_dim: usize,
    pub max_target_positions: usize,
    pub conv_activation: ConvActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(SizePreset::S, 138, 10_000)
    }
}

impl ModelConfig {
    /// Dimensions of a named size; one attention head per 64 channels.
    pub fn preset(size: SizePreset, phoneme_vocab_size: usize, subword_vocab_size: usize) -> Self {
        let (embed_dim, ffn_dim) = match size {
            SizePreset::S => (256, 2048),
            SizePreset::M => (512, 2048),
            SizePreset::L => (768, 3072),
        };
        Self {
            embed_dim,
            ffn_dim,
            speech_layers: 12,
            text_layers: 6,
            decoder_layers: 6,
            heads: embed_dim / 64,
            dropout: 0.1,
            label_smoothing: 0.1,
            share_mode: ShareMode::None,
            phoneme_vocab_size,
            subword_vocab_size,
            size_preset: Some(size),
            input_dim: 80,
            max_target_positions: 1024,
            conv_activation: ConvActivation::Relu,
        }
    }

    /// Offset added to a text layer index to find its tied speech layer.
    pub fn tie_offset(&self) -> usize {
        self.speech_layers.saturating_sub(self.text_layers)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.ffn_dim == 0 || self.input_dim == 0 {
            return err("embed_dim, ffn_dim and input_dim must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return err(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.embed_dim % 2 != 0 {
            return err(format!("embed_dim {} must be even for sinusoidal positions", self.embed_dim));
        }
        if self.share_mode == ShareMode::TieTop6 && self.text_layers > self.speech_layers {
            return err(format!(
                "tie_top6 needs text_layers ({}) <= speech_layers ({})",
                self.text_layers, self.speech_layers
            ));
        }
        if self.phoneme_vocab_size < 4 || self.subword_vocab_size < 5 {
            return err("vocabularies must hold the special tokens".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.label_smoothing) {
            return err("dropout must lie in [0, 1) and label_smoothing in [0, 1]".into());
        }
        if self.max_target_positions == 0 {
            return err("max_target_positions must be positive".into());
        }
        Ok(())
    }
}
