//! Text side of the pipeline: pronouncing dictionary, phoneme inputs,
//! subword targets and the denoising mask.

mod lexicon;
mod phonemes;
mod subword;

pub use lexicon::{is_phoneme, parse_lexicon, split_stress, Lexicon, Pronunciation, BASE_PHONEMES};
pub use phonemes::{
    apply_noise, build_phoneme_vocab, characterize, normalize_word, phonemize, PhonemeSequence, PhonemeVocab,
    Phonemized, EOS_ID as PHONEME_EOS_ID, NOISE, NOISE_ID, PAD_ID as PHONEME_PAD_ID, UNK_ID as PHONEME_UNK_ID,
    WORD_MARK,
};
pub use subword::{
    learn_subwords, SubwordSequence, SubwordVocab, BOS_ID, BOUNDARY, EOS_ID, PAD_ID, UNK_ID,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("sentence has no words")]
    EmptySentence,
    #[error("no word of {0:?} could be mapped to phonemes")]
    Unmappable(String),
    #[error("mask ratio {0} outside [0, 1]")]
    MaskRatio(f64),
    #[error("subword corpus is empty")]
    EmptyCorpus,
    #[error("subword vocabulary size {requested} too small; need at least {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}
