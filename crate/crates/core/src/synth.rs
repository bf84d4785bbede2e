//! Toy corpus with pseudo-speech: every phoneme becomes a few frames of a
//! fixed template plus Gaussian noise, so speech and text share structure
//! exactly and small models can learn the mapping quickly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{write_features, FeatureMatrix};
use crate::text::{split_stress, Lexicon, BASE_PHONEMES};
use crate::trainer::{write_manifest, ManifestRow, TrainError};

const DETERMINERS: [(&str, &str); 4] = [("the", "DH AH0"), ("a", "AH0"), ("my", "M AY1"), ("your", "Y AO1 R")];
const ADJECTIVES: [(&str, &str); 10] = [
    ("big", "B IH1 G"),
    ("small", "S M AO1 L"),
    ("red", "R EH1 D"),
    ("green", "G R IY1 N"),
    ("old", "OW1 L D"),
    ("new", "N UW1"),
    ("happy", "HH AE1 P IY0"),
    ("quiet", "K W AY1 AH0 T"),
    ("yellow", "Y EH1 L OW0"),
    ("purple", "P ER1 P AH0 L"),
];
const NOUNS: [(&str, &str); 20] = [
    ("cat", "K AE1 T"),
    ("dog", "D AO1 G"),
    ("bird", "B ER1 D"),
    ("fish", "F IH1 SH"),
    ("horse", "HH AO1 R S"),
    ("mouse", "M AW1 S"),
    ("tree", "T R IY1"),
    ("house", "HH AW1 S"),
    ("book", "B UH1 K"),
    ("car", "K AA1 R"),
    ("ship", "SH IH1 P"),
    ("apple", "AE1 P AH0 L"),
    ("rabbit", "R AE1 B AH0 T"),
    ("garden", "G AA1 R D AH0 N"),
    ("window", "W IH1 N D OW0"),
    ("table", "T EY1 B AH0 L"),
    ("river", "R IH1 V ER0"),
    ("tiger", "T AY1 G ER0"),
    ("lemon", "L EH1 M AH0 N"),
    ("pencil", "P EH1 N S AH0 L"),
];
const VERBS: [(&str, &str); 10] = [
    ("sees", "S IY1 Z"),
    ("likes", "L AY1 K S"),
    ("finds", "F AY1 N D Z"),
    ("hears", "HH IY1 R Z"),
    ("wants", "W AA1 N T S"),
    ("moves", "M UW1 V Z"),
    ("holds", "HH OW1 L D Z"),
    ("calls", "K AO1 L Z"),
    ("visits", "V IH1 Z IH0 T S"),
    ("follows", "F AA1 L OW0 Z"),
];
const ADVERBS: [(&str, &str); 6] = [
    ("today", "T AH0 D EY1"),
    ("again", "AH0 G EH1 N"),
    ("slowly", "S L OW1 L IY0"),
    ("quickly", "K W IH1 K L IY0"),
    ("now", "N AW1"),
    ("here", "HH IY1 R"),
];

/// Largest lexicon the generator can emit.
pub const MAX_WORDS: usize = 50;
/// Feature dimension of the pseudo-speech.
pub const SYNTH_DIM: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Paired (speech, transcript) training utterances.
    pub size: usize,
    /// Text-only sentences.
    pub text_size: usize,
    /// Held-out test utterances.
    pub test_size: usize,
    /// Lexicon size, at most [`MAX_WORDS`].
    pub words: usize,
    /// Words that never occur in paired training utterances but do occur
    /// in the text-only corpus and in half of the test utterances.
    pub held_out: usize,
    pub frames_per_phoneme: usize,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 200,
            text_size: 0,
            test_size: 0,
            words: 30,
            held_out: 0,
            frames_per_phoneme: 4,
            noise_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub text: String,
    /// Toy target-language rendering, for translation modes.
    pub translation: String,
    pub phonemes: Vec<String>,
    pub features: FeatureMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub lexicon: Lexicon,
    pub train: Vec<SynthUtterance>,
    pub test: Vec<SynthUtterance>,
    pub text: Vec<String>,
    pub held_out: Vec<String>,
}

/// `(word, pronunciation)` lists per grammatical slot, trimmed so the total
/// is `words`.
fn word_classes(words: usize) -> Vec<Vec<(&'static str, &'static str)>> {
    let all: [&[(&str, &str)]; 5] = [&DETERMINERS, &ADJECTIVES, &NOUNS, &VERBS, &ADVERBS];
    let mut counts: Vec<usize> = all
        .iter()
        .map(|c| ((c.len() * words) as f64 / MAX_WORDS as f64).round().max(1.0) as usize)
        .collect();
    // Fix rounding drift on the noun class, the largest.
    let total: usize = counts.iter().sum();
    counts[2] = (counts[2] + words).saturating_sub(total).clamp(1, NOUNS.len());
    all.iter().zip(counts).map(|(c, n)| c[..n].to_vec()).collect()
}

/// Template of one phoneme token: one-hot base phoneme (dims 0..39),
/// one-hot stress class (dims 39..43), word-initial flag (dim 44).
pub fn phoneme_template(phoneme: &str, word_initial: bool) -> Vec<f32> {
    let mut t = vec![0.0; SYNTH_DIM];
    let (base, stress) = split_stress(phoneme).expect("toy lexicon uses ARPAbet");
    let idx = BASE_PHONEMES.iter().position(|&p| p == base).expect("base phoneme");
    t[idx] = 1.0;
    t[39 + stress.map_or(0, |s| s as usize + 1)] = 1.0;
    if word_initial {
        t[44] = 1.0;
    }
    t
}

fn render(text: &str, lexicon: &Lexicon, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, FeatureMatrix) {
    let normal = Normal::new(0.0, cfg.noise_std).expect("valid std");
    let mut phonemes = Vec::new();
    let mut data = Vec::new();
    for word in text.split_whitespace() {
        let pron = lexicon.first(&word.to_uppercase()).expect("sentence words come from the lexicon");
        for (i, p) in pron.iter().enumerate() {
            phonemes.push(p.clone());
            let t = phoneme_template(p, i == 0);
            for _ in 0..cfg.frames_per_phoneme {
                data.extend(t.iter().map(|&v| v + normal.sample(rng) as f32));
            }
        }
    }
    let frames = phonemes.len() * cfg.frames_per_phoneme;
    (phonemes, FeatureMatrix::new(frames, SYNTH_DIM, data).expect("frame layout"))
}

/// Reverses every word: a deterministic stand-in for a second language.
fn toy_translation(text: &str) -> String {
    text.split_whitespace().map(|w| w.chars().rev().collect::<String>()).collect::<Vec<_>>().join(" ")
}

pub fn gen_synth(cfg: &SynthConfig) -> Result<SynthCorpus, TrainError> {
    if cfg.words == 0 || cfg.words > MAX_WORDS {
        return Err(TrainError::Config(format!("words must be in 1..={MAX_WORDS}, got {}", cfg.words)));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) || cfg.frames_per_phoneme == 0 {
        return Err(TrainError::Config("noise_std must be finite and non-negative, frames_per_phoneme positive".into()));
    }
    let classes = word_classes(cfg.words);
    let mut lexicon = Lexicon::default();
    for class in &classes {
        for (w, p) in class {
            lexicon.insert(w, p.split(' ').map(String::from).collect())?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Held-out words come from the open classes (adjectives, nouns).
    let mut open: Vec<&str> = classes[1].iter().chain(&classes[2]).map(|(w, _)| *w).collect();
    open.shuffle(&mut rng);
    if cfg.held_out >= open.len() {
        return Err(TrainError::Config(format!("at most {} held-out words are possible", open.len() - 1)));
    }
    let held: BTreeSet<&str> = open[..cfg.held_out].iter().copied().collect();

    let pick = |rng: &mut ChaCha8Rng, class: &[(&'static str, &'static str)], allow_held: bool| -> &'static str {
        loop {
            let w = class[rng.gen_range(0..class.len())].0;
            if allow_held || !held.contains(w) {
                return w;
            }
        }
    };
    // DET ADJ NOUN VERB DET NOUN [ADV]
    let sentence = |rng: &mut ChaCha8Rng, allow_held: bool| -> String {
        let mut words = vec![
            pick(rng, &classes[0], true),
            pick(rng, &classes[1], allow_held),
            pick(rng, &classes[2], allow_held),
            pick(rng, &classes[3], true),
            pick(rng, &classes[0], true),
            pick(rng, &classes[2], allow_held),
        ];
        if rng.gen_bool(0.5) {
            words.push(pick(rng, &classes[4], true));
        }
        words.join(" ")
    };
    let has_held = |s: &str| s.split(' ').any(|w| held.contains(w));

    let utterance = |rng: &mut ChaCha8Rng, id: String, text: String| {
        let (phonemes, features) = render(&text, &lexicon, cfg, rng);
        SynthUtterance {
            id,
            translation: toy_translation(&text),
            text,
            phonemes,
            features,
        }
    };
    let mut train = Vec::with_capacity(cfg.size);
    for i in 0..cfg.size {
        let text = sentence(&mut rng, false);
        train.push(utterance(&mut rng, format!("train{i:05}"), text));
    }
    let text: Vec<String> = (0..cfg.text_size).map(|_| sentence(&mut rng, true)).collect();
    let mut test = Vec::with_capacity(cfg.test_size);
    for i in 0..cfg.test_size {
        let want_held = !held.is_empty() && i % 2 == 0;
        let s = loop {
            let s = sentence(&mut rng, want_held);
            if has_held(&s) == want_held {
                break s;
            }
        };
        test.push(utterance(&mut rng, format!("test{i:05}"), s));
    }
    Ok(SynthCorpus {
        lexicon,
        train,
        test,
        text,
        held_out: held.into_iter().map(String::from).collect(),
    })
}

impl SynthCorpus {
    /// Writes `lexicon.dict`, `train.tsv`, `test.tsv`, `text.txt`,
    /// `parallel.txt`, `held_out.txt` and `feats/*.feat` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TrainError> {
        let dir = dir.as_ref();
        let io = |p: &Path, e| TrainError::Io(p.display().to_string(), e);
        let feats = dir.join("feats");
        std::fs::create_dir_all(&feats).map_err(|e| io(&feats, e))?;
        let mut written = Vec::new();
        let mut put = |name: &str, body: String| -> Result<(), TrainError> {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| io(&p, e))?;
            written.push(p);
            Ok(())
        };
        put("lexicon.dict", self.lexicon.to_cmu_string())?;
        put("text.txt", self.text.iter().map(|l| format!("{l}\n")).collect())?;
        put(
            "parallel.txt",
            self.text.iter().map(|l| format!("{l}\t{}\n", toy_translation(l))).collect(),
        )?;
        put("held_out.txt", self.held_out.iter().map(|w| format!("{w}\n")).collect())?;
        for (name, set) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let mut rows = Vec::with_capacity(set.len());
            for u in set {
                let rel = format!("feats/{}.feat", u.id);
                write_features(dir.join(&rel), &u.features)?;
                rows.push(ManifestRow {
                    id: u.id.clone(),
                    audio: rel,
                    n_frames: u.features.frames(),
                    transcript: u.text.clone(),
                    translation: u.translation.clone(),
                });
            }
            let p = dir.join(name);
            write_manifest(&p, &rows)?;
            written.push(p);
        }
        Ok(written)
    }
}
