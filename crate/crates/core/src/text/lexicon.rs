//! Pronouncing dictionary in the CMU text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::TextError;

/// The 39 ARPAbet base phonemes.
pub const BASE_PHONEMES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Splits `AY1` into `("AY", Some(1))`; `None` when the base is unknown.
pub fn split_stress(token: &str) -> Option<(&str, Option<u8>)> {
    let (base, stress) = match token.as_bytes().last() {
        Some(d @ b'0'..=b'2') => (&token[..token.len() - 1], Some(d - b'0')),
        _ => (token, None),
    };
    BASE_PHONEMES.contains(&base).then_some((base, stress))
}

pub fn is_phoneme(token: &str) -> bool {
    split_stress(token).is_some()
}

pub type Pronunciation = Vec<String>;

/// Uppercase word -> pronunciations in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Pronunciation>>,
}

impl Lexicon {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| TextError::Io(path.display().to_string(), e))?;
        // The upstream dictionary has a handful of Latin-1 comment bytes.
        let text = String::from_utf8_lossy(&bytes);
        parse_lexicon(&text)
    }

    pub fn get(&self, word: &str) -> Option<&[Pronunciation]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// First listed pronunciation.
    pub fn first(&self, word: &str) -> Option<&Pronunciation> {
        self.entries.get(word).and_then(|p| p.first())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Pronunciation])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Adds a pronunciation after any existing ones.
    pub fn insert(&mut self, word: &str, pronunciation: Pronunciation) -> Result<(), TextError> {
        if pronunciation.is_empty() {
            return Err(TextError::Lexicon {
                line: 0,
                reason: format!("empty pronunciation for {word}"),
            });
        }
        if let Some(bad) = pronunciation.iter().find(|p| !is_phoneme(p)) {
            return Err(TextError::Lexicon {
                line: 0,
                reason: format!("unknown phoneme {bad} in {word}"),
            });
        }
        self.entries.entry(word.to_uppercase()).or_default().push(pronunciation);
        Ok(())
    }

    /// Renders the CMU text format; alternates become `WORD(2)`, `WORD(3)`, ...
    pub fn to_cmu_string(&self) -> String {
        let mut out = String::new();
        for (word, prons) in &self.entries {
            for (i, p) in prons.iter().enumerate() {
                if i == 0 {
                    let _ = writeln!(out, "{word}  {}", p.join(" "));
                } else {
                    let _ = writeln!(out, "{word}({})  {}", i + 1, p.join(" "));
                }
            }
        }
        out
    }
}

/// Parses CMU-format lines `WORD  PH1 PH2 ...`. `;;;` lines and trailing
/// `# ...` annotations are comments; `WORD(n)` lines are alternates.
pub fn parse_lexicon(text: &str) -> Result<Lexicon, TextError> {
    let mut lex = Lexicon::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.starts_with(";;;") {
            continue;
        }
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let head = fields.next().expect("non-empty line");
        let word = match head.find('(') {
            Some(open) if head.ends_with(')') && head[open + 1..head.len() - 1].bytes().all(|b| b.is_ascii_digit()) => {
                &head[..open]
            }
            _ => head,
        };
        let phones: Pronunciation = fields.map(str::to_string).collect();
        if phones.is_empty() {
            return Err(TextError::Lexicon {
                line: line_no,
                reason: format!("empty pronunciation for {word}"),
            });
        }
        if let Some(bad) = phones.iter().find(|p| !is_phoneme(p)) {
            return Err(TextError::Lexicon {
                line: line_no,
                reason: format!("unknown phoneme {bad}"),
            });
        }
        lex.entries.entry(word.to_uppercase()).or_default().push(phones);
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_paper_word() {
        let lex = parse_lexicon("DELIGHTFUL  D IH0 L AY1 T F AH0 L\n").unwrap();
        assert_eq!(
            lex.first("DELIGHTFUL").unwrap().join(" "),
            "D IH0 L AY1 T F AH0 L"
        );
    }

    #[test]
    fn comments_are_skipped() {
        assert!(parse_lexicon(";;; comment\n").unwrap().is_empty());
        let lex = parse_lexicon("aalen AE1 L AH0 N # place, german\n").unwrap();
        assert_eq!(lex.first("AALEN").unwrap().len(), 4);
    }

    #[test]
    fn alternates_append_in_order() {
        let lex = parse_lexicon("A  AH0\nA(2)  EY1\n").unwrap();
        let mut expect = BTreeMap::new();
        expect.insert("A".to_string(), vec![vec!["AH0".to_string()], vec!["EY1".to_string()]]);
        assert_eq!(lex.entries, expect);
    }

    #[test]
    fn bad_lines_report_line_number() {
        let err = parse_lexicon("A  AH0\nB  XX1\n").unwrap_err();
        assert!(matches!(err, TextError::Lexicon { line: 2, .. }), "{err}");
        let err = parse_lexicon("\n\nWORD\n").unwrap_err();
        assert!(matches!(err, TextError::Lexicon { line: 3, .. }), "{err}");
    }

    #[test]
    fn stress_split() {
        assert_eq!(split_stress("AY1"), Some(("AY", Some(1))));
        assert_eq!(split_stress("NG"), Some(("NG", None)));
        assert_eq!(split_stress("Q"), None);
        assert_eq!(split_stress("AY3"), None);
    }
}
