//! Spoken-form input: word-initial-marked phoneme (or character) sequences
//! and the denoising mask.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lexicon::Lexicon;
use super::TextError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const NOISE: &str = "<NOISE>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const NOISE_ID: u32 = 3;
/// Prefix marking the first unit of a word.
pub const WORD_MARK: char = '_';

const SPECIALS: [&str; 4] = [PAD, UNK, EOS, NOISE];

/// Input-side token inventory: four specials, then sorted unit tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    marked: bool,
}

impl PhonemeVocab {
    fn from_units(units: BTreeSet<String>) -> Self {
        let marked = units.iter().any(|u| u.starts_with(WORD_MARK) && u.len() > 1);
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(units).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, marked }
    }

    /// Character inventory for the character-input ablation: every
    /// non-space character of `corpus`, plus its word-initial variant.
    pub fn characters<'a>(corpus: impl IntoIterator<Item = &'a str>, marking: bool) -> Self {
        let mut units = BTreeSet::new();
        for line in corpus {
            for word in line.split_whitespace() {
                for (i, c) in word.chars().enumerate() {
                    units.insert(c.to_string());
                    if marking && i == 0 {
                        units.insert(format!("{WORD_MARK}{c}"));
                    }
                }
            }
        }
        Self::from_units(units)
    }

    /// Reads one token per line; the id is the line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TextError::Io(path.display().to_string(), e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(TextError::Vocab(format!("{} does not start with the special tokens", path.display())));
        }
        let index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if index.len() != tokens.len() {
            return Err(TextError::Vocab(format!("{} has duplicate tokens", path.display())));
        }
        let marked = tokens[4..].iter().any(|u| u.starts_with(WORD_MARK) && u.len() > 1);
        Ok(Self { tokens, index, marked })
    }

    pub fn to_lines(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens excluding the four specials.
    pub fn num_units(&self) -> usize {
        self.tokens.len() - SPECIALS.len()
    }

    pub fn is_marked(&self) -> bool {
        self.marked
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }
}

/// Phoneme inventory of a lexicon. Every phoneme that occurs becomes a
/// token; with `marking`, each phoneme that occurs word-initially also gets
/// a `_`-prefixed token. Specials come first, then the sorted units.
pub fn build_phoneme_vocab(lexicon: &Lexicon, marking: bool) -> PhonemeVocab {
    let mut units = BTreeSet::new();
    for (_, prons) in lexicon.iter() {
        for p in prons {
            for (i, ph) in p.iter().enumerate() {
                units.insert(ph.clone());
                if marking && i == 0 {
                    units.insert(format!("{WORD_MARK}{ph}"));
                }
            }
        }
    }
    PhonemeVocab::from_units(units)
}

/// Input-side token ids (no trailing `<eos>`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn render(&self, vocab: &PhonemeVocab) -> String {
        self.ids
            .iter()
            .map(|&i| vocab.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phonemized {
    pub sequence: PhonemeSequence,
    /// Words spelled out letter by letter because the lexicon lacks them.
    pub oov_words: usize,
    /// Unit strings before id lookup.
    pub units: Vec<String>,
}

impl fmt::Display for Phonemized {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.units.join(" "))
    }
}

/// Uppercases and drops characters other than letters, digits and
/// apostrophes.
pub fn normalize_word(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_uppercase)
        .collect()
}

fn lookup<'a>(lexicon: &'a Lexicon, word: &str) -> Option<&'a [String]> {
    if let Some(p) = lexicon.first(word) {
        return Some(p);
    }
    let trimmed = word.trim_matches('\'');
    if let Some(p) = lexicon.first(trimmed) {
        return Some(p);
    }
    lexicon.first(&trimmed.replace('\'', "")).map(Vec::as_slice)
}

/// Converts a sentence to its marked phoneme sequence using the first
/// pronunciation of each word. Words missing from the lexicon are spelled
/// with the pronunciations of their letters.
pub fn phonemize(sentence: &str, lexicon: &Lexicon, vocab: &PhonemeVocab) -> Result<Phonemized, TextError> {
    let words: Vec<String> = sentence
        .split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(TextError::EmptySentence);
    }
    let mut units = Vec::new();
    let mut oov = 0;
    let mut mapped = 0;
    for word in &words {
        let phones: Vec<&str> = match lookup(lexicon, word) {
            Some(p) => p.iter().map(String::as_str).collect(),
            None => {
                oov += 1;
                word.chars()
                    .filter_map(|c| lexicon.first(&c.to_string()))
                    .flat_map(|p| p.iter().map(String::as_str))
                    .collect()
            }
        };
        if phones.is_empty() {
            continue;
        }
        mapped += 1;
        for (i, ph) in phones.into_iter().enumerate() {
            if i == 0 && vocab.is_marked() {
                units.push(format!("{WORD_MARK}{ph}"));
            } else {
                units.push(ph.to_string());
            }
        }
    }
    if mapped == 0 {
        return Err(TextError::Unmappable(sentence.to_string()));
    }
    let ids = units.iter().map(|u| vocab.id_or_unk(u)).collect();
    Ok(Phonemized {
        sequence: PhonemeSequence { ids },
        oov_words: oov,
        units,
    })
}

/// Character-level counterpart of [`phonemize`] for the input-representation
/// ablation: each word becomes its characters, the first one marked.
pub fn characterize(sentence: &str, vocab: &PhonemeVocab) -> Result<PhonemeSequence, TextError> {
    let mut ids = Vec::new();
    for word in sentence.split_whitespace() {
        for (i, c) in word.chars().enumerate() {
            let unit = if i == 0 && vocab.is_marked() {
                format!("{WORD_MARK}{c}")
            } else {
                c.to_string()
            };
            ids.push(vocab.id_or_unk(&unit));
        }
    }
    if ids.is_empty() {
        return Err(TextError::EmptySentence);
    }
    Ok(PhonemeSequence { ids })
}

/// Replaces exactly `round(ratio * len)` positions, drawn uniformly without
/// replacement, by `<NOISE>`. Deterministic in `seed`.
pub fn apply_noise(seq: &PhonemeSequence, ratio: f64, seed: u64) -> Result<PhonemeSequence, TextError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TextError::MaskRatio(ratio));
    }
    let n = seq.ids.len();
    let count = ((ratio * n as f64).round() as usize).min(n);
    let mut ids = seq.ids.clone();
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pos in sample(&mut rng, n, count) {
            ids[pos] = NOISE_ID;
        }
    }
    Ok(PhonemeSequence { ids })
}
