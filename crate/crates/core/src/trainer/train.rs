use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use numcore::{AdamState, Graph};
use serde::{Deserialize, Serialize};

use super::checkpoint::{init_from_pretrained, Checkpoint, RngState};
use super::{derive_seed, make_batches, Batch, SpeechItem, TaskMode, TextItem, TextTask, TrainConfig, TrainError};
use crate::audio::{spec_augment, FeatureMatrix};
use crate::model::{pad_features, Model};
use crate::text::{apply_noise, PhonemeSequence, BOS_ID, EOS_ID, NOISE_ID, PHONEME_EOS_ID};

const TAG_SPEECH_ORDER: u64 = 1;
const TAG_TEXT_ORDER: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_SPECAUG: u64 = 4;
const TAG_NOISE: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepTask {
    Speech,
    Text,
}

impl StepTask {
    fn name(self) -> &'static str {
        match self {
            Self::Speech => "speech",
            Self::Text => "text",
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub task: StepTask,
    pub loss: f64,
    pub lr: f64,
    /// Non-pad target tokens in the batch.
    pub tokens: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub speech_steps: usize,
    pub text_steps: usize,
    /// Token-weighted mean training loss over the epoch's speech batches.
    pub speech_loss: f64,
    pub text_loss: f64,
    /// Source tokens replaced by `<NOISE>` and source tokens seen (without
    /// `<eos>`) over the epoch's text batches.
    pub masked_tokens: usize,
    pub source_tokens: usize,
}

impl EpochSummary {
    pub fn masked_fraction(&self) -> f64 {
        if self.source_tokens == 0 {
            0.0
        } else {
            self.masked_tokens as f64 / self.source_tokens as f64
        }
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub epochs: Vec<EpochSummary>,
    pub log: Vec<LogRecord>,
    /// Per-epoch checkpoint files, oldest first.
    pub checkpoints: Vec<PathBuf>,
}

/// Token-weighted running mean.
#[derive(Default)]
struct Mean {
    sum: f64,
    tokens: usize,
}

impl Mean {
    fn add(&mut self, loss: f64, tokens: usize) {
        self.sum += loss * tokens as f64;
        self.tokens += tokens;
    }

    fn get(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.sum / self.tokens as f64
        }
    }
}

struct TextStream<'a> {
    lengths: Vec<usize>,
    budget: usize,
    seed: u64,
    cycle: u64,
    pos: usize,
    batches: Vec<Batch>,
    items: &'a [TextItem],
}

impl<'a> TextStream<'a> {
    fn new(items: &'a [TextItem], budget: usize, seed: u64, cycle: u64, pos: u64) -> Result<Self, TrainError> {
        let lengths = items.iter().map(|t| t.source.len() + 1).collect();
        let mut s = Self {
            lengths,
            budget,
            seed,
            cycle,
            pos: pos as usize,
            batches: Vec::new(),
            items,
        };
        s.refill(true);
        if s.batches.is_empty() {
            return Err(TrainError::Config(format!("no text item fits the {budget}-token batch budget")));
        }
        Ok(s)
    }

    fn refill(&mut self, warn: bool) {
        let (batches, skipped) = make_batches(&self.lengths, self.budget, derive_seed(self.seed, TAG_TEXT_ORDER, self.cycle, 0));
        if warn && !skipped.is_empty() {
            log::warn!("skipping {} text items longer than the {}-token budget", skipped.len(), self.budget);
        }
        self.batches = batches;
    }

    fn next(&mut self) -> Vec<&'a TextItem> {
        if self.pos >= self.batches.len() {
            self.cycle += 1;
            self.pos = 0;
            self.refill(false);
        }
        let b = &self.batches[self.pos];
        self.pos += 1;
        b.items.iter().map(|&i| &self.items[i]).collect()
    }
}

fn with_eos(ids: &[u32], eos: u32) -> Vec<u32> {
    ids.iter().copied().chain(std::iter::once(eos)).collect()
}

fn with_bos(ids: &[u32]) -> Vec<u32> {
    std::iter::once(BOS_ID).chain(ids.iter().copied()).collect()
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    mode: &'a TaskMode,
    model: Model<f32>,
    adam: AdamState<f32>,
    step: u64,
    log: Vec<LogRecord>,
    log_file: Option<BufWriter<File>>,
}

impl Trainer<'_> {
    /// Backward and Adam update for the loss already built in `g`.
    fn finish_step(&mut self, g: Graph<f32>, loss: numcore::Var, tokens: usize, task: StepTask) -> Result<f64, TrainError> {
        let diverged = |reason: String| TrainError::Diverged {
            step: self.step,
            task: task.name(),
            reason,
        };
        if let Some(f) = g.fault() {
            return Err(diverged(f.to_string()));
        }
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(diverged(format!("loss {value}")));
        }
        let grads = g.backward(loss, &self.model.params).map_err(|e| diverged(e.to_string()))?;
        let lr = self.cfg.lr_at(self.step);
        self.adam.step(&mut self.model.params, &grads, lr)?;
        let rec = LogRecord {
            step: self.step,
            task,
            loss: value,
            lr,
            tokens,
        };
        if let Some(f) = &mut self.log_file {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| TrainError::Io("training log".into(), e))?;
        }
        self.log.push(rec);
        self.step += 1;
        Ok(value)
    }

    fn speech_step(&mut self, items: &[&SpeechItem]) -> Result<(f64, usize), TrainError> {
        let seed = self.cfg.seed;
        let augmented: Vec<FeatureMatrix> = items
            .iter()
            .enumerate()
            .map(|(k, it)| spec_augment(&it.features, &self.cfg.spec_augment, derive_seed(seed, TAG_SPECAUG, self.step, k as u64)))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&FeatureMatrix> = augmented.iter().collect();
        let feats = pad_features::<f32>(&refs)?;
        let prefixes: Vec<Vec<u32>> = items.iter().map(|it| with_bos(&it.target)).collect();
        let targets: Vec<Vec<u32>> = items.iter().map(|it| with_eos(&it.target, EOS_ID)).collect();
        let mut g = Graph::new(true, derive_seed(seed, TAG_DROPOUT, self.step, 0));
        let enc = self.model.encode_speech(&mut g, &feats)?;
        let logits = self.model.decode_logits(&mut g, enc.memory, &enc.lengths, &prefixes)?;
        let (loss, tokens) = self.model.loss(&mut g, logits, &targets)?;
        Ok((self.finish_step(g, loss, tokens, StepTask::Speech)?, tokens))
    }

    /// Returns loss, target tokens, masked and total source tokens.
    fn text_step(&mut self, items: &[&TextItem]) -> Result<(f64, usize, usize, usize), TrainError> {
        let ratio = self.mode.effective_mask_ratio();
        let mut masked = 0;
        let mut total = 0;
        let mut sources = Vec::with_capacity(items.len());
        for (k, it) in items.iter().enumerate() {
            let mut ids = it.source.clone();
            if ratio > 0.0 {
                let seq = PhonemeSequence { ids };
                ids = apply_noise(&seq, ratio, derive_seed(self.cfg.seed, TAG_NOISE, self.step, k as u64))?.ids;
            }
            masked += ids.iter().filter(|&&i| i == NOISE_ID).count();
            total += ids.len();
            sources.push(with_eos(&ids, PHONEME_EOS_ID));
        }
        let prefixes: Vec<Vec<u32>> = items.iter().map(|it| with_bos(&it.target)).collect();
        let targets: Vec<Vec<u32>> = items.iter().map(|it| with_eos(&it.target, EOS_ID)).collect();
        let mut g = Graph::new(true, derive_seed(self.cfg.seed, TAG_DROPOUT, self.step, 0));
        let enc = self.model.encode_text(&mut g, &sources)?;
        let logits = self.model.decode_logits(&mut g, enc.memory, &enc.lengths, &prefixes)?;
        let (loss, tokens) = self.model.loss(&mut g, logits, &targets)?;
        Ok((self.finish_step(g, loss, tokens, StepTask::Text)?, tokens, masked, total))
    }
}

/// Runs `cfg.epochs` passes over the speech data. Each speech step is
/// followed by one text step unless the text task is `none`; the text
/// stream cycles independently of epochs. A checkpoint is written after
/// every epoch when `cfg.checkpoint_dir` is set.
pub fn train(cfg: &TrainConfig, mode: &TaskMode, model: Model<f32>, speech: &[SpeechItem], text: &[TextItem]) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    mode.validate()?;
    if speech.is_empty() {
        return Err(TrainError::Config("no speech training data".into()));
    }
    let joint = mode.text_task != TextTask::None;
    if joint && text.is_empty() {
        return Err(TrainError::Config(format!("text task {:?} needs text training data", mode.text_task)));
    }
    let max_target = model.config.max_target_positions;
    if let Some(bad) = speech.iter().find(|s| s.target.len() + 1 > max_target || s.target.is_empty()) {
        return Err(TrainError::Config(format!("utterance {} has {} target tokens", bad.id, bad.target.len())));
    }
    if let Some(bad) = text.iter().position(|t| t.target.len() + 1 > max_target || t.target.is_empty()) {
        return Err(TrainError::Config(format!("text item {bad} has {} target tokens", text[bad].target.len())));
    }

    let (mut model, adam, start_epoch, step, rng) = match &cfg.resume_from {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let m = ckpt.to_model()?;
            let adam = ckpt.adam_state(&m)?.unwrap_or_else(|| AdamState::new(cfg.adam(), &m.params));
            (m, adam, ckpt.epoch, ckpt.step, ckpt.rng)
        }
        None => {
            let adam = AdamState::new(cfg.adam(), &model.params);
            let rng = RngState {
                seed: cfg.seed,
                ..Default::default()
            };
            (model, adam, 0, 0, rng)
        }
    };
    if cfg.resume_from.is_none() {
        let enc = cfg.init_encoder_ckpt.as_ref().map(Checkpoint::load).transpose()?;
        let dec = cfg.init_decoder_ckpt.as_ref().map(Checkpoint::load).transpose()?;
        init_from_pretrained(&mut model, enc.as_ref(), dec.as_ref())?;
    }

    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(dir.display().to_string(), e))?;
    }
    let log_file = match &cfg.log_path {
        Some(p) => {
            let f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(cfg.resume_from.is_some())
                .truncate(cfg.resume_from.is_none())
                .open(p)
                .map_err(|e| TrainError::Io(p.display().to_string(), e))?;
            Some(BufWriter::new(f))
        }
        None => None,
    };

    let mut text_stream = if joint {
        Some(TextStream::new(text, cfg.text_batch_tokens, cfg.seed, rng.text_cycle, rng.text_pos)?)
    } else {
        None
    };
    let frames: Vec<usize> = speech.iter().map(|s| s.features.frames()).collect();
    let mut t = Trainer {
        cfg,
        mode,
        model,
        adam,
        step,
        log: Vec::new(),
        log_file,
    };
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let (batches, skipped) = make_batches(&frames, cfg.speech_batch_frames, derive_seed(cfg.seed, TAG_SPEECH_ORDER, epoch as u64, 0));
        if !skipped.is_empty() && epoch == start_epoch + 1 {
            log::warn!("skipping {} utterances longer than the {}-frame budget", skipped.len(), cfg.speech_batch_frames);
        }
        if batches.is_empty() {
            return Err(TrainError::Config(format!("no utterance fits the {}-frame batch budget", cfg.speech_batch_frames)));
        }
        let mut summary = EpochSummary {
            epoch,
            ..Default::default()
        };
        let (mut speech_mean, mut text_mean) = (Mean::default(), Mean::default());
        for b in &batches {
            let items: Vec<&SpeechItem> = b.items.iter().map(|&i| &speech[i]).collect();
            let (loss, tokens) = t.speech_step(&items)?;
            speech_mean.add(loss, tokens);
            summary.speech_steps += 1;
            if let Some(stream) = &mut text_stream {
                let items = stream.next();
                let (loss, tokens, masked, total) = t.text_step(&items)?;
                text_mean.add(loss, tokens);
                summary.text_steps += 1;
                summary.masked_tokens += masked;
                summary.source_tokens += total;
            }
        }
        summary.speech_loss = speech_mean.get();
        summary.text_loss = text_mean.get();
        log::info!(
            "epoch {epoch}: speech loss {:.4}, text loss {:.4}, step {}",
            summary.speech_loss,
            summary.text_loss,
            t.step
        );
        if let Some(f) = &mut t.log_file {
            f.flush().map_err(|e| TrainError::Io("training log".into(), e))?;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            let rng = RngState {
                seed: cfg.seed,
                text_cycle: text_stream.as_ref().map_or(0, |s| s.cycle),
                text_pos: text_stream.as_ref().map_or(0, |s| s.pos as u64),
            };
            let path = dir.join(format!("checkpoint_{epoch:04}.dtckpt"));
            Checkpoint::from_model(&t.model, Some(&t.adam), epoch, t.step, rng).save(&path)?;
            checkpoints.push(path);
        }
        epochs.push(summary);
    }
    Ok(TrainOutcome {
        model: t.model,
        adam: t.adam,
        epochs,
        log: t.log,
        checkpoints,
    })
}
