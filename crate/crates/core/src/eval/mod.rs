//! Beam-search inference and WER/BLEU scoring.

mod beam;
mod bleu;
mod wer;

pub use beam::{beam_search, decode_utterance, decode_many, BeamConfig, Hypothesis, ModelScorer, Scorer};
pub use bleu::{bleu, tokenize_intl, BleuScore};
pub use wer::{corpus_wer, normalize_for_wer, wer, WerBreakdown};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("beam size must be at least 1")]
    Beam,
    #[error("empty reference")]
    EmptyReference,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{references} references but {hypotheses} hypotheses")]
    LengthMismatch { references: usize, hypotheses: usize },
    #[error("scorer returned {found} rows of width {width} for {expected} prefixes")]
    Scorer { expected: usize, found: usize, width: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}
