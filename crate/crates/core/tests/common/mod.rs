#![allow(dead_code)]

pub mod oracles;

use duotrain::model::{ConvActivation, ModelConfig, ShareMode};
use duotrain::synth::{gen_synth, SynthConfig, SynthCorpus, SynthUtterance, SYNTH_DIM};
use duotrain::text::{build_phoneme_vocab, learn_subwords, PhonemeVocab, SubwordVocab};
use duotrain::trainer::{SourceEncoder, SpeechItem, TextCorpus, TextItem};

/// Synthetic corpus with vocabularies and training items derived from it.
pub struct Setup {
    pub corpus: SynthCorpus,
    pub subwords: SubwordVocab,
    pub source: SourceEncoder,
    pub speech: Vec<SpeechItem>,
    pub text: Vec<TextItem>,
}

impl Setup {
    pub fn new(cfg: &SynthConfig, subword_size: usize) -> Self {
        let corpus = gen_synth(cfg).unwrap();
        let lines: Vec<&str> = corpus
            .train
            .iter()
            .chain(&corpus.test)
            .map(|u| u.text.as_str())
            .chain(corpus.text.iter().map(String::as_str))
            .collect();
        let subwords = learn_subwords(lines, subword_size).unwrap();
        let vocab: PhonemeVocab = build_phoneme_vocab(&corpus.lexicon, true);
        let source = SourceEncoder::Phoneme {
            lexicon: corpus.lexicon.clone(),
            vocab,
        };
        let speech = speech_items(&corpus.train, &subwords);
        let text = TextItem::from_corpus(&TextCorpus::Monolingual(corpus.text.clone()), &source, &subwords).unwrap();
        Self {
            corpus,
            subwords,
            source,
            speech,
            text,
        }
    }

    pub fn model_config(&self, dim: usize, layers: usize, share: ShareMode) -> ModelConfig {
        ModelConfig {
            embed_dim: dim,
            ffn_dim: 4 * dim,
            speech_layers: layers,
            text_layers: layers,
            decoder_layers: layers,
            heads: (dim / 16).max(1),
            dropout: 0.1,
            label_smoothing: 0.1,
            share_mode: share,
            phoneme_vocab_size: self.source.vocab().len(),
            subword_vocab_size: self.subwords.len(),
            size_preset: None,
            input_dim: SYNTH_DIM,
            max_target_positions: 1024,
            conv_activation: ConvActivation::Relu,
        }
    }
}

pub fn speech_items(utts: &[SynthUtterance], vocab: &SubwordVocab) -> Vec<SpeechItem> {
    utts.iter()
        .map(|u| SpeechItem {
            id: u.id.clone(),
            features: u.features.clone(),
            target: vocab.encode(&u.text).ids,
        })
        .collect()
}
