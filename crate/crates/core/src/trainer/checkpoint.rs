//! Binary checkpoint format, averaging and component warm starts.
//!
//! Layout (little-endian): magic `DTCKPT01`, version u32, header length u32,
//! JSON header, parameter section, optimizer section. A section is a u32
//! record count followed by records of name length u32, name bytes, rank
//! u32, dims u32 × rank and an f32 payload.

use std::path::Path;

use numcore::{AdamConfig, AdamState, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{build_model, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DTCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of the run's random streams; all randomness is derived from
/// the seed and these counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Completed passes over the text stream.
    pub text_cycle: u64,
    /// Next batch within the current text pass.
    pub text_pos: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    /// Moments keyed by canonical parameter name, in parameter order.
    pub m: Vec<(String, Tensor<f32>)>,
    pub v: Vec<(String, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub step: u64,
    pub rng: RngState,
    /// Canonical (non-alias) parameter names and values.
    pub params: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    epoch: usize,
    step: u64,
    rng: RngState,
    adam: Option<AdamHeader>,
}

fn named(store: &ParamStore<f32>, tensors: impl Iterator<Item = Tensor<f32>>) -> Vec<(String, Tensor<f32>)> {
    store.iter().map(|(_, n, _)| n.to_string()).zip(tensors).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, adam: Option<&AdamState<f32>>, epoch: usize, step: u64, rng: RngState) -> Self {
        let params = named(&model.params, model.params.iter().map(|(_, _, t)| t.clone()));
        let optimizer = adam.map(|a| OptimizerState {
            config: a.config,
            step: a.step,
            m: named(&model.params, a.m.iter().cloned()),
            v: named(&model.params, a.v.iter().cloned()),
        });
        Self {
            config: model.config.clone(),
            epoch,
            step,
            rng,
            params,
            optimizer,
        }
    }

    /// Rebuilds the model (aliases included) and writes every stored tensor.
    pub fn to_model(&self) -> Result<Model<f32>, TrainError> {
        let mut model = build_model::<f32>(&self.config, 0)?;
        let expected = model.params.len();
        if self.params.len() != expected {
            return Err(TrainError::Config(format!(
                "checkpoint has {} tensors, model expects {expected}",
                self.params.len()
            )));
        }
        for (name, t) in &self.params {
            set_named(&mut model.params, name, t)?;
        }
        Ok(model)
    }

    /// Adam state aligned to `model`'s parameter order, if stored.
    pub fn adam_state(&self, model: &Model<f32>) -> Result<Option<AdamState<f32>>, TrainError> {
        let Some(opt) = &self.optimizer else { return Ok(None) };
        let mut state = AdamState::new(opt.config, &model.params);
        state.step = opt.step;
        for (slot, stored) in [(&mut state.m, &opt.m), (&mut state.v, &opt.v)] {
            let lookup: std::collections::HashMap<&str, &Tensor<f32>> = stored.iter().map(|(n, t)| (n.as_str(), t)).collect();
            for (i, (_, name, p)) in model.params.iter().enumerate() {
                let t = lookup
                    .get(name)
                    .ok_or_else(|| TrainError::Config(format!("optimizer state lacks {name}")))?;
                check_shape(name, p.shape(), t.shape())?;
                slot[i] = (*t).clone();
            }
        }
        Ok(Some(state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng,
            adam: self.optimizer.as_ref().map(|o| AdamHeader {
                lr: o.config.lr,
                beta1: o.config.beta1,
                beta2: o.config.beta2,
                eps: o.config.eps,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        write_section(&mut out, self.params.iter().map(|(n, t)| (n.clone(), t)));
        match &self.optimizer {
            Some(o) => write_section(
                &mut out,
                o.m.iter()
                    .map(|(n, t)| (format!("m.{n}"), t))
                    .chain(o.v.iter().map(|(n, t)| (format!("v.{n}"), t))),
            ),
            None => out.extend_from_slice(&0u32.to_le_bytes()),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| format!("header: {e}"))?;
        let params = read_section(&mut r)?;
        let opt_records = read_section(&mut r)?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let optimizer = match header.adam {
            None if opt_records.is_empty() => None,
            None => return Err("optimizer records without optimizer header".into()),
            Some(a) => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (name, t) in opt_records {
                    match name.split_once('.') {
                        Some(("m", rest)) => m.push((rest.to_string(), t)),
                        Some(("v", rest)) => v.push((rest.to_string(), t)),
                        _ => return Err(format!("unexpected optimizer record {name}")),
                    }
                }
                Some(OptimizerState {
                    config: AdamConfig {
                        lr: a.lr,
                        beta1: a.beta1,
                        beta2: a.beta2,
                        eps: a.eps,
                    },
                    step: a.step,
                    m,
                    v,
                })
            }
        };
        Ok(Self {
            config: header.model,
            epoch: header.epoch,
            step: header.step,
            rng: header.rng,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::Io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| TrainError::Io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes).map_err(|reason| TrainError::Checkpoint {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn write_section<'a>(out: &mut Vec<u8>, records: impl Iterator<Item = (String, &'a Tensor<f32>)>) {
    let records: Vec<_> = records.collect();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_section(r: &mut Reader) -> Result<Vec<(String, Tensor<f32>)>, String> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&dims, data).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, t));
    }
    Ok(out)
}

fn check_shape(name: &str, expected: &[usize], found: &[usize]) -> Result<(), TrainError> {
    if expected != found {
        return Err(TrainError::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn set_named(store: &mut ParamStore<f32>, name: &str, t: &Tensor<f32>) -> Result<(), TrainError> {
    let id = store
        .id(name)
        .ok_or_else(|| TrainError::Config(format!("model has no tensor named {name}")))?;
    check_shape(name, store.tensor(id).shape(), t.shape())?;
    *store.tensor_mut(id) = t.clone();
    Ok(())
}

/// Elementwise mean of every tensor over `paths`. The optimizer state is
/// dropped; epoch, step and rng come from the newest input.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<Checkpoint, TrainError> {
    if paths.is_empty() {
        return Err(TrainError::Config("no checkpoints to average".into()));
    }
    let first = Checkpoint::load(&paths[0])?;
    let mut sums: Vec<Vec<f64>> = first.params.iter().map(|(_, t)| t.data().iter().map(|&v| v as f64).collect()).collect();
    let mut newest = (first.epoch, first.step, 0usize);
    let mut meta = (first.epoch, first.step, first.rng);
    for (k, p) in paths.iter().enumerate().skip(1) {
        let c = Checkpoint::load(p)?;
        if c.config != first.config {
            return Err(TrainError::Checkpoint {
                path: p.as_ref().display().to_string(),
                reason: "model config differs from the first checkpoint".into(),
            });
        }
        for ((name, t), ((fname, ft), sum)) in c.params.iter().zip(first.params.iter().zip(&mut sums)) {
            if name != fname {
                return Err(TrainError::Checkpoint {
                    path: p.as_ref().display().to_string(),
                    reason: format!("tensor {name} where {fname} was expected"),
                });
            }
            check_shape(name, ft.shape(), t.shape())?;
            for (s, &v) in sum.iter_mut().zip(t.data()) {
                *s += v as f64;
            }
        }
        if (c.epoch, c.step, k) >= newest {
            newest = (c.epoch, c.step, k);
            meta = (c.epoch, c.step, c.rng);
        }
    }
    let n = paths.len() as f64;
    let params = first
        .params
        .iter()
        .zip(sums)
        .map(|((name, t), s)| {
            let data = s.into_iter().map(|v| (v / n) as f32).collect();
            (name.clone(), Tensor::new(t.shape(), data).expect("same shape"))
        })
        .collect();
    Ok(Checkpoint {
        config: first.config,
        epoch: meta.0,
        step: meta.1,
        rng: meta.2,
        params,
        optimizer: None,
    })
}

/// Copies speech-encoder tensors from `encoder` and decoder tensors from
/// `decoder` into `model`; everything else keeps its current values.
pub fn init_from_pretrained(model: &mut Model<f32>, encoder: Option<&Checkpoint>, decoder: Option<&Checkpoint>) -> Result<(), TrainError> {
    for (ckpt, prefix) in [(encoder, "speech."), (decoder, "decoder.")] {
        let Some(ckpt) = ckpt else { continue };
        let wanted: Vec<String> = model
            .params
            .iter()
            .map(|(_, n, _)| n.to_string())
            .filter(|n| n.starts_with(prefix))
            .collect();
        for name in wanted {
            let t = ckpt
                .param(&name)
                .ok_or_else(|| TrainError::Config(format!("pretrained checkpoint lacks tensor {name}")))?;
            set_named(&mut model.params, &name, t)?;
        }
    }
    Ok(())
}
