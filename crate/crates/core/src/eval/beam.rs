use numcore::{Graph, Tensor};
use rayon::prelude::*;

use super::EvalError;
use crate::audio::FeatureMatrix;
use crate::model::{pad_features, Model};
use crate::text::{SubwordSequence, BOS_ID, EOS_ID, PAD_ID};

/// Next-token log-probabilities for a batch of prefixes. Every prefix starts
/// with `<bos>`; each returned row has one entry per vocabulary id.
pub trait Scorer {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>, EvalError>;
}

/// A finished hypothesis. `tokens` ends with `<eos>` and excludes `<bos>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: SubwordSequence,
    pub score: f64,
    pub normalized_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len_factor: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len_factor: 1.0,
        }
    }
}

impl BeamConfig {
    /// Maximum number of generated tokens, `<eos>` included.
    pub fn max_len(&self, encoder_length: usize) -> usize {
        (self.max_len_factor * encoder_length as f64).floor() as usize + 10
    }
}

struct Live {
    tokens: Vec<u32>,
    score: f64,
}

/// Length-normalized beam search. Each step keeps the `beam` best
/// continuations overall; those ending in `<eos>` are finished and shrink the
/// live beam. `<eos>` is forced at `max_len`. Search stops once no live
/// hypothesis can still beat the best finished one.
pub fn beam_search<S: Scorer + ?Sized>(scorer: &mut S, beam: usize, max_len: usize) -> Result<Hypothesis, EvalError> {
    if beam == 0 {
        return Err(EvalError::Beam);
    }
    let max_len = max_len.max(1);
    let mut live = vec![Live {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=max_len {
        let room = beam - finished.len();
        if room == 0 || live.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<u32>> = live
            .iter()
            .map(|h| std::iter::once(BOS_ID).chain(h.tokens.iter().copied()).collect())
            .collect();
        let rows = scorer.log_probs(&prefixes)?;
        let width = rows.first().map_or(0, Vec::len);
        if rows.len() != prefixes.len() || rows.iter().any(|r| r.len() != width) || width <= EOS_ID as usize {
            return Err(EvalError::Scorer {
                expected: prefixes.len(),
                found: rows.len(),
                width,
            });
        }
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (i, (h, row)) in live.iter().zip(&rows).enumerate() {
            for (v, &lp) in row.iter().enumerate() {
                let v = v as u32;
                if v == PAD_ID || v == BOS_ID || (step == max_len && v != EOS_ID) {
                    continue;
                }
                cands.push((h.score + lp as f64, i, v));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(room);
        let mut next = Vec::with_capacity(cands.len());
        for (score, i, v) in cands {
            let mut tokens = live[i].tokens.clone();
            tokens.push(v);
            if v == EOS_ID {
                let len = tokens.len() as f64;
                finished.push(Hypothesis {
                    tokens: SubwordSequence { ids: tokens },
                    score,
                    normalized_score: score / len,
                });
            } else {
                next.push(Live { tokens, score });
            }
        }
        live = next;
        // Scores only decrease, so a live hypothesis ends no better than
        // score / max_len.
        if let Some(best) = best_of(&finished) {
            let bound = live.iter().map(|h| h.score / max_len as f64).fold(f64::NEG_INFINITY, f64::max);
            if best.normalized_score >= bound {
                break;
            }
        }
    }
    Ok(best_of(&finished).expect("<eos> is forced at max_len").clone())
}

fn best_of(finished: &[Hypothesis]) -> Option<&Hypothesis> {
    finished
        .iter()
        .reduce(|a, b| if b.normalized_score > a.normalized_score { b } else { a })
}

/// Scores prefixes with the decoder against one encoded utterance.
pub struct ModelScorer<'a> {
    model: &'a Model<f32>,
    memory: Tensor<f32>,
    length: usize,
}

impl<'a> ModelScorer<'a> {
    /// Runs the speech encoder once; the text encoder is not used.
    pub fn new(model: &'a Model<f32>, features: &FeatureMatrix) -> Result<Self, EvalError> {
        let padded = pad_features::<f32>(&[features])?;
        let mut g = Graph::new(false, 0);
        let enc = model.encode_speech(&mut g, &padded)?;
        Ok(Self {
            model,
            memory: g.value(enc.memory).clone(),
            length: enc.lengths[0],
        })
    }

    pub fn encoder_length(&self) -> usize {
        self.length
    }
}

impl Scorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>, EvalError> {
        let b = prefixes.len();
        let shape = self.memory.shape();
        let (l, d) = (shape[1], shape[2]);
        let data: Vec<f32> = self.memory.data().iter().copied().cycle().take(b * l * d).collect();
        let mut g = Graph::new(false, 0);
        let memory = g.constant(Tensor::new(&[b, l, d], data).map_err(crate::model::ModelError::from)?);
        let logits = self.model.decode_logits(&mut g, memory, &vec![self.length; b], prefixes)?;
        let k = g.shape(logits)[1];
        let v = g.shape(logits)[2];
        let values = g.value(logits).data();
        Ok(prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let row = &values[(i * k + p.len() - 1) * v..(i * k + p.len()) * v];
                log_softmax(row)
            })
            .collect())
    }
}

fn log_softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max as f64 + row.iter().map(|&x| ((x - max) as f64).exp()).sum::<f64>().ln();
    row.iter().map(|&x| (x as f64 - lse) as f32).collect()
}

/// Beam-decodes one utterance.
pub fn decode_utterance(model: &Model<f32>, features: &FeatureMatrix, cfg: &BeamConfig) -> Result<Hypothesis, EvalError> {
    let mut scorer = ModelScorer::new(model, features)?;
    let max_len = cfg.max_len(scorer.encoder_length());
    beam_search(&mut scorer, cfg.beam_size, max_len)
}

/// Decodes utterances in parallel on the current rayon pool; output order
/// matches input order.
pub fn decode_many(model: &Model<f32>, features: &[&FeatureMatrix], cfg: &BeamConfig) -> Result<Vec<Hypothesis>, EvalError> {
    if cfg.beam_size == 0 {
        return Err(EvalError::Beam);
    }
    features.par_iter().map(|f| decode_utterance(model, f, cfg)).collect()
}
