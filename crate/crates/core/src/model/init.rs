use std::fmt;

use numcore::{ParamStore, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, ModelError, ShareMode};

struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    /// Xavier-uniform with the given fans.
    fn xavier(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<(), ModelError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::from_f64(self.rng.gen_range(-limit..limit)));
        self.store.insert(name, t)?;
        Ok(())
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Result<(), ModelError> {
        self.xavier(name, &[rows, cols], rows, cols)
    }

    fn zeros(&mut self, name: String, n: usize) -> Result<(), ModelError> {
        self.store.insert(name, Tensor::zeros(&[n]))?;
        Ok(())
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> Result<(), ModelError> {
        self.matrix(format!("{prefix}.weight"), din, dout)?;
        self.zeros(format!("{prefix}.bias"), dout)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<(), ModelError> {
        self.store.insert(format!("{prefix}.gain"), Tensor::full(&[d], T::one()))?;
        self.zeros(format!("{prefix}.bias"), d)
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<(), ModelError> {
        for p in ["q", "k", "v", "out"] {
            self.linear(&format!("{prefix}.{p}"), d, d)?;
        }
        Ok(())
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<(), ModelError> {
        self.linear(&format!("{prefix}.fc1"), d, f)?;
        self.linear(&format!("{prefix}.fc2"), f, d)
    }

    fn encoder_layer(&mut self, prefix: &str, d: usize, f: usize) -> Result<(), ModelError> {
        self.norm(&format!("{prefix}.self_attn_norm"), d)?;
        self.attention(&format!("{prefix}.self_attn"), d)?;
        self.norm(&format!("{prefix}.ffn_norm"), d)?;
        self.ffn(&format!("{prefix}.ffn"), d, f)
    }

    fn decoder_layer(&mut self, prefix: &str, d: usize, f: usize) -> Result<(), ModelError> {
        self.norm(&format!("{prefix}.self_attn_norm"), d)?;
        self.attention(&format!("{prefix}.self_attn"), d)?;
        self.norm(&format!("{prefix}.cross_attn_norm"), d)?;
        self.attention(&format!("{prefix}.cross_attn"), d)?;
        self.norm(&format!("{prefix}.ffn_norm"), d)?;
        self.ffn(&format!("{prefix}.ffn"), d, f)
    }
}

/// Every tensor name suffix of one encoder layer, as registered.
pub(crate) fn encoder_layer_suffixes() -> Vec<String> {
    let mut out = vec!["self_attn_norm.gain".to_string(), "self_attn_norm.bias".to_string()];
    for p in ["q", "k", "v", "out"] {
        out.push(format!("self_attn.{p}.weight"));
        out.push(format!("self_attn.{p}.bias"));
    }
    out.extend(["ffn_norm.gain", "ffn_norm.bias", "ffn.fc1.weight", "ffn.fc1.bias", "ffn.fc2.weight", "ffn.fc2.bias"].map(String::from));
    out
}

/// Allocates and initializes every parameter. Weight matrices, conv kernels
/// and embeddings are Xavier-uniform, biases zero, norm gains one. Under
/// [`ShareMode::TieTop6`] text layer `i` is an alias of speech layer
/// `speech_layers - text_layers + i`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>, ModelError> {
    cfg.validate()?;
    let (d, f) = (cfg.embed_dim, cfg.ffn_dim);
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };

    init.xavier("speech.conv1.weight".into(), &[3, cfg.input_dim, d], 3 * cfg.input_dim, 3 * d)?;
    init.zeros("speech.conv1.bias".into(), d)?;
    init.xavier("speech.conv2.weight".into(), &[3, d, d], 3 * d, 3 * d)?;
    init.zeros("speech.conv2.bias".into(), d)?;
    for i in 0..cfg.speech_layers {
        init.encoder_layer(&format!("speech.layers.{i}"), d, f)?;
    }
    init.norm("speech.final_norm", d)?;

    init.matrix("text.embed".into(), cfg.phoneme_vocab_size, d)?;
    let offset = cfg.tie_offset();
    for i in 0..cfg.text_layers {
        let prefix = format!("text.layers.{i}");
        match cfg.share_mode {
            ShareMode::None => init.encoder_layer(&prefix, d, f)?,
            ShareMode::TieTop6 => {
                for s in encoder_layer_suffixes() {
                    let target = init
                        .store
                        .id(&format!("speech.layers.{}.{s}", offset + i))
                        .expect("speech layer registered");
                    init.store.alias(format!("{prefix}.{s}"), target)?;
                }
            }
        }
    }
    init.norm("text.final_norm", d)?;

    init.matrix("decoder.embed".into(), cfg.subword_vocab_size, d)?;
    for i in 0..cfg.decoder_layers {
        init.decoder_layer(&format!("decoder.layers.{i}"), d, f)?;
    }
    init.norm("decoder.final_norm", d)?;

    Ok(Model {
        config: cfg.clone(),
        params: store,
    })
}

/// Distinct trainable scalars per component; tied tensors count once,
/// under the speech encoder that owns them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub speech_encoder: usize,
    pub text_encoder: usize,
    pub decoder: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.speech_encoder + self.text_encoder + self.decoder
    }
}

impl fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "speech encoder {}, text encoder {}, decoder {}, total {}",
            self.speech_encoder,
            self.text_encoder,
            self.decoder,
            self.total()
        )
    }
}

impl<T: Scalar> Model<T> {
    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut b = ParamBreakdown {
            speech_encoder: 0,
            text_encoder: 0,
            decoder: 0,
        };
        for (_, name, t) in self.params.iter() {
            let slot = match name.split('.').next() {
                Some("speech") => &mut b.speech_encoder,
                Some("text") => &mut b.text_encoder,
                _ => &mut b.decoder,
            };
            *slot += t.numel();
        }
        b
    }
}
