use numcore::nn::{attention, causal_mask, key_padding_mask, linear, time_mask};
use numcore::{sinusoidal_positions, Graph, Scalar, Tensor, Var};

use super::{ConvActivation, Model, ModelError};
use crate::audio::FeatureMatrix;
use crate::text::{PAD_ID, PHONEME_PAD_ID};

/// Zero-padded `[B, N, dim]` feature batch with per-item frame counts.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFeatures<T> {
    pub data: Tensor<T>,
    pub lengths: Vec<usize>,
}

pub fn pad_features<T: Scalar>(items: &[&FeatureMatrix]) -> Result<PaddedFeatures<T>, ModelError> {
    let Some(first) = items.first() else {
        return Err(ModelError::Input("empty feature batch".into()));
    };
    let dim = first.dim();
    if let Some(bad) = items.iter().find(|m| m.dim() != dim) {
        return Err(ModelError::Input(format!("mixed feature dimensions {dim} and {}", bad.dim())));
    }
    let n = items.iter().map(|m| m.frames()).max().unwrap_or(0);
    let mut data = vec![T::zero(); items.len() * n * dim];
    for (b, m) in items.iter().enumerate() {
        for (dst, &src) in data[b * n * dim..].iter_mut().zip(m.data()) {
            *dst = T::from_f64(src as f64);
        }
    }
    Ok(PaddedFeatures {
        data: Tensor::new(&[items.len(), n, dim], data)?,
        lengths: items.iter().map(|m| m.frames()).collect(),
    })
}

/// Output length of the two stride-2 convolutions: `ceil(ceil(n/2)/2)`.
pub fn subsampled_length(n: usize) -> usize {
    n.div_ceil(2).div_ceil(2)
}

/// Encoder output `[B, L, embed_dim]` and the valid length of each item.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub memory: Var,
    pub lengths: Vec<usize>,
}

fn pad_ids(seqs: &[Vec<u32>], pad: u32) -> (Vec<usize>, usize) {
    let t = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = vec![pad as usize; seqs.len() * t];
    for (b, s) in seqs.iter().enumerate() {
        for (i, &id) in s.iter().enumerate() {
            ids[b * t + i] = id as usize;
        }
    }
    (ids, t)
}

impl<T: Scalar> Model<T> {
    fn param(&self, g: &mut Graph<T>, name: &str) -> Result<Var, ModelError> {
        Ok(g.param_named(&self.params, name)?)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let w = self.param(g, &format!("{prefix}.weight"))?;
        let b = self.param(g, &format!("{prefix}.bias"))?;
        Ok(linear(g, x, w, b)?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let gain = self.param(g, &format!("{prefix}.gain"))?;
        let bias = self.param(g, &format!("{prefix}.bias"))?;
        Ok(g.layer_norm(x, gain, bias)?)
    }

    fn attend(&self, g: &mut Graph<T>, x: Var, memory: Var, mask: Var, prefix: &str) -> Result<Var, ModelError> {
        let q = self.linear(g, x, &format!("{prefix}.q"))?;
        let k = self.linear(g, memory, &format!("{prefix}.k"))?;
        let v = self.linear(g, memory, &format!("{prefix}.v"))?;
        let ctx = attention(g, q, k, v, self.config.heads, Some(mask))?;
        self.linear(g, ctx, &format!("{prefix}.out"))
    }

    fn residual(&self, g: &mut Graph<T>, x: Var, branch: Var) -> Result<Var, ModelError> {
        let branch = g.dropout(branch, self.config.dropout);
        Ok(g.add(x, branch)?)
    }

    fn ffn(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let h = self.linear(g, x, &format!("{prefix}.fc1"))?;
        let h = g.relu(h);
        self.linear(g, h, &format!("{prefix}.fc2"))
    }

    /// One pre-norm encoder block. `prefix` is e.g. `speech.layers.3`;
    /// `mask` is an additive key mask.
    pub fn encoder_layer(&self, g: &mut Graph<T>, prefix: &str, x: Var, mask: Var) -> Result<Var, ModelError> {
        let h = self.norm(g, x, &format!("{prefix}.self_attn_norm"))?;
        let h = self.attend(g, h, h, mask, &format!("{prefix}.self_attn"))?;
        let x = self.residual(g, x, h)?;
        let h = self.norm(g, x, &format!("{prefix}.ffn_norm"))?;
        let h = self.ffn(g, h, &format!("{prefix}.ffn"))?;
        self.residual(g, x, h)
    }

    fn decoder_layer(&self, g: &mut Graph<T>, prefix: &str, x: Var, self_mask: Var, memory: Var, memory_mask: Var) -> Result<Var, ModelError> {
        let h = self.norm(g, x, &format!("{prefix}.self_attn_norm"))?;
        let h = self.attend(g, h, h, self_mask, &format!("{prefix}.self_attn"))?;
        let x = self.residual(g, x, h)?;
        let h = self.norm(g, x, &format!("{prefix}.cross_attn_norm"))?;
        let h = self.attend(g, h, memory, memory_mask, &format!("{prefix}.cross_attn"))?;
        let x = self.residual(g, x, h)?;
        let h = self.norm(g, x, &format!("{prefix}.ffn_norm"))?;
        let h = self.ffn(g, h, &format!("{prefix}.ffn"))?;
        self.residual(g, x, h)
    }

    /// `x · sqrt(d) + positions`, then dropout.
    fn scale_and_position(&self, g: &mut Graph<T>, x: Var, t: usize) -> Result<Var, ModelError> {
        let d = self.config.embed_dim;
        let x = g.scale(x, T::from_f64((d as f64).sqrt()));
        let pos = g.constant(sinusoidal_positions(t, d)?);
        let x = g.add(x, pos)?;
        Ok(g.dropout(x, self.config.dropout))
    }

    fn encoder_stack(&self, g: &mut Graph<T>, stack: &str, layers: usize, x: Var, lengths: &[usize]) -> Result<Var, ModelError> {
        let t = g.shape(x)[1];
        let mask = g.constant(key_padding_mask(lengths, t));
        let mut x = x;
        for i in 0..layers {
            x = self.encoder_layer(g, &format!("{stack}.layers.{i}"), x, mask)?;
        }
        self.norm(g, x, &format!("{stack}.final_norm"))
    }

    /// Subsampling convolutions, positions and the speech encoder layers.
    /// Frames past each length never influence valid outputs.
    pub fn encode_speech(&self, g: &mut Graph<T>, feats: &PaddedFeatures<T>) -> Result<Encoded, ModelError> {
        let shape = feats.data.shape();
        if shape.len() != 3 || shape[0] != feats.lengths.len() || shape[2] != self.config.input_dim {
            return Err(ModelError::Input(format!(
                "features {shape:?} for {} items of dimension {}",
                feats.lengths.len(),
                self.config.input_dim
            )));
        }
        let n = shape[1];
        if let Some(bad) = feats.lengths.iter().position(|&l| l == 0 || l > n) {
            return Err(ModelError::Input(format!("item {bad} has {} of {n} frames", feats.lengths[bad])));
        }
        let x = g.constant(feats.data.clone());
        let m = g.constant(time_mask(&feats.lengths, n));
        let x = g.mul(x, m)?;
        let w = self.param(g, "speech.conv1.weight")?;
        let b = self.param(g, "speech.conv1.bias")?;
        let mut h = g.conv1d(x, w, b, 2, 1)?;
        if self.config.conv_activation == ConvActivation::Relu {
            h = g.relu(h);
        }
        let l1: Vec<usize> = feats.lengths.iter().map(|l| l.div_ceil(2)).collect();
        let m = g.constant(time_mask(&l1, g.shape(h)[1]));
        let h = g.mul(h, m)?;
        let w = self.param(g, "speech.conv2.weight")?;
        let b = self.param(g, "speech.conv2.bias")?;
        let h = g.conv1d(h, w, b, 2, 1)?;
        let lengths: Vec<usize> = feats.lengths.iter().map(|&l| subsampled_length(l)).collect();
        let t = g.shape(h)[1];
        let h = self.scale_and_position(g, h, t)?;
        let memory = self.encoder_stack(g, "speech", self.config.speech_layers, h, &lengths)?;
        Ok(Encoded { memory, lengths })
    }

    /// Phoneme embeddings, positions and the text encoder layers. Sequences
    /// are right-padded with the phoneme pad id.
    pub fn encode_text(&self, g: &mut Graph<T>, seqs: &[Vec<u32>]) -> Result<Encoded, ModelError> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(ModelError::Input("empty text batch or sequence".into()));
        }
        let (ids, t) = pad_ids(seqs, PHONEME_PAD_ID);
        let table = self.param(g, "text.embed")?;
        let x = g.embedding(table, &ids, &[seqs.len(), t])?;
        let x = self.scale_and_position(g, x, t)?;
        let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let memory = self.encoder_stack(g, "text", self.config.text_layers, x, &lengths)?;
        Ok(Encoded { memory, lengths })
    }

    /// `[B, K, subword_vocab]` next-token logits for each prefix position.
    /// Prefixes start with `<bos>` and are right-padded internally.
    pub fn decode_logits(&self, g: &mut Graph<T>, memory: Var, memory_lengths: &[usize], prefixes: &[Vec<u32>]) -> Result<Var, ModelError> {
        let ms = g.shape(memory).to_vec();
        if ms.len() != 3 || ms[0] != prefixes.len() || ms[0] != memory_lengths.len() || ms[2] != self.config.embed_dim {
            return Err(ModelError::Input(format!("memory {ms:?} for {} prefixes", prefixes.len())));
        }
        if let Some(bad) = memory_lengths.iter().position(|&l| l == 0 || l > ms[1]) {
            return Err(ModelError::Input(format!("memory item {bad} has length {}", memory_lengths[bad])));
        }
        if prefixes.iter().any(Vec::is_empty) {
            return Err(ModelError::Input("empty target prefix".into()));
        }
        let (ids, k) = pad_ids(prefixes, PAD_ID);
        if k > self.config.max_target_positions {
            return Err(ModelError::Input(format!(
                "target prefix of {k} tokens exceeds the maximum of {}",
                self.config.max_target_positions
            )));
        }
        let table = self.param(g, "decoder.embed")?;
        let x = g.embedding(table, &ids, &[prefixes.len(), k])?;
        let mut x = self.scale_and_position(g, x, k)?;
        let self_mask = g.constant(causal_mask(k));
        let memory_mask = g.constant(key_padding_mask(memory_lengths, ms[1]));
        for i in 0..self.config.decoder_layers {
            x = self.decoder_layer(g, &format!("decoder.layers.{i}"), x, self_mask, memory, memory_mask)?;
        }
        let x = self.norm(g, x, "decoder.final_norm")?;
        let out = g.transpose_last(table)?;
        Ok(g.matmul(x, out)?)
    }

    /// [`label_smoothed_loss`] at the configured smoothing.
    pub fn loss(&self, g: &mut Graph<T>, logits: Var, targets: &[Vec<u32>]) -> Result<(Var, usize), ModelError> {
        label_smoothed_loss(g, logits, targets, self.config.label_smoothing)
    }
}

/// Token-averaged label-smoothed NLL of `logits: [B, K, V]` against targets
/// right-padded to `K` with `<pad>`, which is excluded.
pub fn label_smoothed_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[Vec<u32>], smoothing: f64) -> Result<(Var, usize), ModelError> {
    let s = g.shape(logits).to_vec();
    if s.len() != 3 || s[0] != targets.len() || targets.iter().any(|t| t.len() > s[1]) {
        return Err(ModelError::Input(format!("logits {s:?} for targets of lengths {:?}", targets.iter().map(Vec::len).collect::<Vec<_>>())));
    }
    let (b, k, v) = (s[0], s[1], s[2]);
    let mut flat = vec![PAD_ID as usize; b * k];
    for (i, t) in targets.iter().enumerate() {
        for (j, &id) in t.iter().enumerate() {
            flat[i * k + j] = id as usize;
        }
    }
    let rows = g.reshape(logits, &[b * k, v])?;
    Ok(g.smoothed_nll(rows, &flat, Some(PAD_ID as usize), smoothing)?)
}
