use std::path::{Path, PathBuf};

use duotrain::audio::FeatureConfig;
use duotrain::eval::BeamConfig;
use duotrain::model::{ModelConfig, SizePreset};
use duotrain::trainer::{TaskMode, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Invalid;

/// Input files and the directory that receives prepared artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub lexicon: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub text_corpus: Option<PathBuf>,
    pub artifacts_dir: PathBuf,
    /// Mark word-initial units with `_`.
    pub word_marking: bool,
    /// Normalize features with the CMVN statistics from `prepare-audio`.
    pub apply_cmvn: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            lexicon: None,
            train_manifest: None,
            text_corpus: None,
            artifacts_dir: PathBuf::from("artifacts"),
            word_marking: true,
            apply_cmvn: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len_factor: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let b = BeamConfig::default();
        Self {
            beam_size: b.beam_size,
            max_len_factor: b.max_len_factor,
        }
    }
}

impl DecodeConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_len_factor: self.max_len_factor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskMode,
    pub decode: DecodeConfig,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `--a.b value`
    /// overrides and validates every section.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Invalid> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Invalid(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for (key, raw) in parse_overrides(overrides)? {
            set_path(&mut value, &key, raw)?;
        }
        apply_size_preset(&mut value)?;
        let cfg: RunConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
            let field = e.path().to_string();
            Invalid(format!("config field `{field}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let v = |what: &str, r: Result<(), String>| r.map_err(|e| Invalid(format!("{what}: {e}")));
        v("features", self.features.validate().map_err(|e| e.to_string()))?;
        v("train", self.train.validate().map_err(|e| e.to_string()))?;
        v("task", self.task.validate().map_err(|e| e.to_string()))?;
        if self.decode.beam_size == 0 || !(self.decode.max_len_factor >= 0.0) {
            return Err(Invalid("decode: beam_size must be >= 1 and max_len_factor >= 0".into()));
        }
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.data.artifacts_dir.join(name)
    }
}

/// Splits `--a.b value` pairs. Values are JSON when they parse as JSON and
/// plain strings otherwise.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, Invalid> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Invalid(format!("expected `--key value`, found `{flag}`")))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => (key, it.next().ok_or_else(|| Invalid(format!("`--{key}` needs a value")))?.clone()),
        };
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key.to_string(), value));
    }
    Ok(out)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Invalid> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Invalid(format!("malformed override key `{key}`")));
        }
        let Value::Object(map) = node else {
            return Err(Invalid(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// A `model.size_preset` supplies the defaults for the model section;
/// explicit model fields still win.
fn apply_size_preset(root: &mut Value) -> Result<(), Invalid> {
    let Some(model) = root.get_mut("model").and_then(Value::as_object_mut) else {
        return Ok(());
    };
    let Some(preset) = model.get("size_preset").filter(|v| !v.is_null()) else {
        return Ok(());
    };
    let size: SizePreset = serde_json::from_value(preset.clone())
        .map_err(|e| Invalid(format!("config field `model.size_preset`: {e}")))?;
    let defaults = ModelConfig::default();
    let base = ModelConfig::preset(size, defaults.phoneme_vocab_size, defaults.subword_vocab_size);
    let Value::Object(mut merged) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("structs serialize to objects")
    };
    for (k, v) in std::mem::take(model) {
        merged.insert(k, v);
    }
    *model = merged;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(None, &args(&["--train.epochs", "3", "--task.text_task=mt", "--data.lexicon", "x.dict"])).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.task.text_task, duotrain::trainer::TextTask::Mt);
        assert_eq!(cfg.data.lexicon, Some(PathBuf::from("x.dict")));
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let err = RunConfig::load(None, &args(&["--train.epoch", "3"])).unwrap_err();
        assert!(err.0.contains("train.epoch"), "{}", err.0);
        let err = RunConfig::load(None, &args(&["--train.epochs", "\"x\""])).unwrap_err();
        assert!(err.0.contains("train.epochs"), "{}", err.0);
        assert!(RunConfig::load(None, &args(&["train.epochs", "3"])).is_err());
        assert!(RunConfig::load(None, &args(&["--train.epochs"])).is_err());
    }

    #[test]
    fn preset_fills_model_section() {
        let cfg = RunConfig::load(None, &args(&["--model.size_preset", "m", "--model.dropout", "0.3"])).unwrap();
        assert_eq!(cfg.model.embed_dim, 512);
        assert_eq!(cfg.model.dropout, 0.3);
    }

    #[test]
    fn validation_runs_after_parsing() {
        assert!(RunConfig::load(None, &args(&["--task.mask_ratio", "1.5"])).is_err());
        assert!(RunConfig::load(None, &args(&["--decode.beam_size", "0"])).is_err());
    }
}
