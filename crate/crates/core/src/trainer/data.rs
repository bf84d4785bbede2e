//! Training-data files and their conversion to id sequences.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{PrimaryTask, TrainError};
use crate::audio::{apply_cmvn, log_mel, read_features, read_wav, CmvnStats, FeatureConfig, FeatureMatrix};
use crate::text::{characterize, phonemize, Lexicon, PhonemeVocab, SubwordVocab};

pub const MANIFEST_HEADER: &str = "id\taudio\tn_frames\ttranscript\ttranslation";

/// One row of a speech manifest. `audio` is a WAV file or a cached feature
/// file, relative to the manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub audio: String,
    pub n_frames: usize,
    pub transcript: String,
    pub translation: String,
}

impl ManifestRow {
    /// Audio path resolved against the directory of `manifest`.
    pub fn audio_path(&self, manifest: &Path) -> PathBuf {
        resolve(manifest.parent().unwrap_or(Path::new(".")), &self.audio)
    }
}

fn read_to_string(path: &Path) -> Result<String, TrainError> {
    std::fs::read_to_string(path).map_err(|e| TrainError::Io(path.display().to_string(), e))
}

fn data_err(path: &Path, line: usize, reason: impl Into<String>) -> TrainError {
    TrainError::Data {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, TrainError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(data_err(path, 1, format!("header must be `{}`", MANIFEST_HEADER.replace('\t', "  "))));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(data_err(path, i + 2, format!("expected 5 tab-separated fields, found {}", f.len())));
        }
        let n_frames = f[2]
            .parse()
            .map_err(|_| data_err(path, i + 2, format!("n_frames `{}` is not a count", f[2])))?;
        rows.push(ManifestRow {
            id: f[0].to_string(),
            audio: f[1].to_string(),
            n_frames,
            transcript: f[3].to_string(),
            translation: f[4].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut out = format!("{MANIFEST_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        let fields = [&r.id, &r.audio, &r.transcript, &r.translation];
        if fields.iter().any(|f| f.contains(['\t', '\n'])) {
            return Err(data_err(path, i + 2, "fields may not contain tabs or newlines"));
        }
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.id, r.audio, r.n_frames, r.transcript, r.translation);
    }
    std::fs::write(path, out).map_err(|e| TrainError::Io(path.display().to_string(), e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TextCorpus {
    Monolingual(Vec<String>),
    Parallel(Vec<(String, String)>),
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        match self {
            Self::Monolingual(v) => v.len(),
            Self::Parallel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One sentence per line, or `source<TAB>target` on every line. Blank
/// lines are skipped.
pub fn read_text_corpus(path: impl AsRef<Path>) -> Result<TextCorpus, TrainError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
    let tabbed = lines.iter().filter(|(_, l)| l.contains('\t')).count();
    if tabbed == 0 {
        return Ok(TextCorpus::Monolingual(lines.iter().map(|(_, l)| l.to_string()).collect()));
    }
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, l) in lines {
        match l.split_once('\t') {
            Some((s, t)) if !t.contains('\t') => pairs.push((s.to_string(), t.to_string())),
            _ => return Err(data_err(path, i + 1, "parallel corpus lines need exactly one tab")),
        }
    }
    Ok(TextCorpus::Parallel(pairs))
}

/// Maps source text to text-encoder input ids.
#[derive(Clone, Debug)]
pub enum SourceEncoder {
    Phoneme { lexicon: Lexicon, vocab: PhonemeVocab },
    Character { vocab: PhonemeVocab },
}

impl SourceEncoder {
    pub fn vocab(&self) -> &PhonemeVocab {
        match self {
            Self::Phoneme { vocab, .. } | Self::Character { vocab } => vocab,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TrainError> {
        Ok(match self {
            Self::Phoneme { lexicon, vocab } => phonemize(text, lexicon, vocab)?.sequence.ids,
            Self::Character { vocab } => characterize(text, vocab)?.ids,
        })
    }
}

/// A speech utterance ready for training: features and target subword ids
/// (without `<bos>`/`<eos>`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeechItem {
    pub id: String,
    pub features: FeatureMatrix,
    pub target: Vec<u32>,
}

/// A text pair ready for training: source unit ids and target subword ids,
/// both without `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextItem {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Log-mel features of a `.wav` file, or a cached feature file, with
/// optional CMVN.
pub fn load_features(path: &Path, features: &FeatureConfig, cmvn: Option<&CmvnStats>) -> Result<FeatureMatrix, TrainError> {
    let m = if path.extension().is_some_and(|e| e == "wav") {
        log_mel(&read_wav(path)?, features)?
    } else {
        read_features(path)?
    };
    Ok(match cmvn {
        Some(stats) => apply_cmvn(&m, stats)?,
        None => m,
    })
}

impl SpeechItem {
    /// Loads features for every manifest row and encodes its target column.
    pub fn load_all(
        manifest: &Path,
        rows: &[ManifestRow],
        task: PrimaryTask,
        vocab: &SubwordVocab,
        features: &FeatureConfig,
        cmvn: Option<&CmvnStats>,
    ) -> Result<Vec<SpeechItem>, TrainError> {
        let base = manifest.parent().unwrap_or(Path::new("."));
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                let features = load_features(&resolve(base, &r.audio), features, cmvn)?;
                if features.frames() != r.n_frames {
                    return Err(data_err(
                        manifest,
                        i + 2,
                        format!("{} has {} frames, manifest says {}", r.audio, features.frames(), r.n_frames),
                    ));
                }
                let text = match task {
                    PrimaryTask::Asr => &r.transcript,
                    PrimaryTask::St => &r.translation,
                };
                if text.trim().is_empty() {
                    return Err(data_err(manifest, i + 2, "empty target text"));
                }
                Ok(SpeechItem {
                    id: r.id.clone(),
                    features,
                    target: vocab.encode(text).ids,
                })
            })
            .collect()
    }
}

impl TextItem {
    /// Monolingual lines become `(spoken form, same text)` pairs; parallel
    /// lines become `(spoken form of source, target text)`.
    pub fn from_corpus(corpus: &TextCorpus, source: &SourceEncoder, vocab: &SubwordVocab) -> Result<Vec<TextItem>, TrainError> {
        let pairs: Vec<(&str, &str)> = match corpus {
            TextCorpus::Monolingual(lines) => lines.iter().map(|l| (l.as_str(), l.as_str())).collect(),
            TextCorpus::Parallel(p) => p.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect(),
        };
        pairs
            .into_iter()
            .map(|(s, t)| {
                Ok(TextItem {
                    source: source.encode(s)?,
                    target: vocab.encode(t).ids,
                })
            })
            .collect()
    }
}

pub(crate) fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
