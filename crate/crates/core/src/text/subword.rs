//! Greedy pair-merge subword vocabulary over word-boundary-marked
//! character sequences.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::TextError;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Symbol prefixed to the first character of every word.
pub const BOUNDARY: char = '\u{2581}';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocab {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

/// Target-side token ids (no `<bos>`/`<eos>`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SubwordSequence {
    pub ids: Vec<u32>,
}

impl SubwordSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    std::iter::once(BOUNDARY.to_string())
        .chain(word.chars().map(|c| c.to_string()))
        .collect()
}

/// Learns merges until the vocabulary (specials + characters + merged
/// symbols) reaches `target_size`, or no adjacent pair remains. Ties on
/// pair frequency go to the lexicographically smallest pair.
pub fn learn_subwords<'a>(corpus: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<SubwordVocab, TextError> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut alphabet: Vec<String> = word_counts
        .keys()
        .flat_map(|w| w.chars())
        .chain(std::iter::once(BOUNDARY))
        .map(|c| c.to_string())
        .collect();
    alphabet.sort();
    alphabet.dedup();
    let minimum = SPECIALS.len() + alphabet.len() + 1;
    if target_size < minimum {
        return Err(TextError::VocabTooSmall { requested: target_size, minimum });
    }

    let mut words: Vec<(Vec<String>, usize)> = word_counts.iter().map(|(w, &c)| (word_symbols(w), c)).collect();
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(alphabet).collect();
    let mut merges = Vec::new();
    while tokens.len() < target_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, count) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
            }
        }
        let Some(best) = pairs
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|((l, r), _)| (l.to_string(), r.to_string()))
        else {
            break;
        };
        let merged = format!("{}{}", best.0, best.1);
        for (syms, _) in &mut words {
            apply_merge(syms, &best.0, &best.1, &merged);
        }
        if !tokens.contains(&merged) {
            tokens.push(merged);
        }
        merges.push(best);
    }
    Ok(SubwordVocab::from_parts(tokens, merges))
}

fn apply_merge(syms: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}

impl SubwordVocab {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let ranks = merges.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Self {
            merges,
            tokens,
            index,
            ranks,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Symbols of one whitespace-free word after applying merges by rank.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let merged = format!("{l}{r}");
            apply_merge(&mut syms, l, r, &merged);
        }
        syms
    }

    pub fn encode(&self, text: &str) -> SubwordSequence {
        let ids = text
            .split_whitespace()
            .flat_map(|w| self.segment_word(w))
            .map(|s| self.id(&s).unwrap_or(UNK_ID))
            .collect();
        SubwordSequence { ids }
    }

    /// Inverse of [`SubwordVocab::encode`] on covered text. `<unk>` renders
    /// as U+FFFD; other specials are dropped.
    pub fn decode(&self, seq: &SubwordSequence) -> String {
        let mut out = String::new();
        for &id in &seq.ids {
            match id {
                UNK_ID => out.push('\u{FFFD}'),
                PAD_ID | BOS_ID | EOS_ID => {}
                _ => {
                    if let Some(t) = self.token(id) {
                        out.push_str(t);
                    }
                }
            }
        }
        out.replace(BOUNDARY, " ").trim_start().to_string()
    }

    /// Whether every character of `text` is a base token.
    pub fn covers(&self, text: &str) -> bool {
        text.chars().filter(|c| !c.is_whitespace()).all(|c| self.index.contains_key(c.to_string().as_str()))
    }

    pub fn save(&self, vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<(), TextError> {
        let vocab: String = self.tokens.iter().map(|t| format!("{t}\n")).collect();
        let merges: String = self.merges.iter().map(|(l, r)| format!("{l} {r}\n")).collect();
        write(vocab_path.as_ref(), &vocab)?;
        write(merges_path.as_ref(), &merges)
    }

    pub fn load(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Self, TextError> {
        let vocab = read(vocab_path.as_ref())?;
        let merges = read(merges_path.as_ref())?;
        let tokens: Vec<String> = vocab.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(TextError::Vocab("subword vocabulary does not start with the special tokens".into()));
        }
        let merges = merges
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let mut f = l.split(' ');
                match (f.next(), f.next(), f.next()) {
                    (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
                    _ => Err(TextError::Vocab(format!("merge line {} is not a `left right` pair", i + 1))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_parts(tokens, merges))
    }
}

fn write(path: &Path, text: &str) -> Result<(), TextError> {
    std::fs::write(path, text).map_err(|e| TextError::Io(path.display().to_string(), e))
}

fn read(path: &Path) -> Result<String, TextError> {
    std::fs::read_to_string(path).map_err(|e| TextError::Io(path.display().to_string(), e))
}
