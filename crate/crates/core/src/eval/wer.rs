use std::ops::Add;

use super::EvalError;

/// Edit counts of one alignment (or a sum of them).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        if self.reference_words == 0 {
            0.0
        } else {
            self.errors() as f64 / self.reference_words as f64
        }
    }
}

impl Add for WerBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_words: self.reference_words + o.reference_words,
        }
    }
}

/// Lowercases, drops punctuation other than apostrophes, splits on
/// whitespace.
pub fn normalize_for_wer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|&c| c.is_alphanumeric() || c.is_whitespace() || c == '\'')
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

/// Unit-cost Levenshtein alignment of normalized words. Among alignments of
/// equal cost the one with the most substitutions wins.
pub fn wer(reference: &str, hypothesis: &str) -> Result<WerBreakdown, EvalError> {
    let r = normalize_for_wer(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(align(&r, &normalize_for_wer(hypothesis)))
}

pub fn corpus_wer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<WerBreakdown, EvalError> {
    let mut total = WerBreakdown::default();
    let mut any = false;
    for (r, h) in pairs {
        total = total + wer(r, h)?;
        any = true;
    }
    if !any {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(total)
}

fn align<T: PartialEq>(r: &[T], h: &[T]) -> WerBreakdown {
    let (n, m) = (r.len(), h.len());
    // (edits, -substitutions), minimized lexicographically.
    let mut cost = vec![vec![(0usize, 0isize); m + 1]; n + 1];
    for i in 0..=n {
        cost[i][0] = (i, 0);
    }
    for j in 0..=m {
        cost[0][j] = (j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (c, s) = cost[i - 1][j - 1];
            let diag = if r[i - 1] == h[j - 1] { (c, s) } else { (c + 1, s - 1) };
            let del = (cost[i - 1][j].0 + 1, cost[i - 1][j].1);
            let ins = (cost[i][j - 1].0 + 1, cost[i][j - 1].1);
            cost[i][j] = diag.min(del).min(ins);
        }
    }
    let (edits, neg_subs) = cost[n][m];
    let substitutions = (-neg_subs) as usize;
    // Given edits and substitutions, deletions - insertions = n - m.
    let rest = edits - substitutions;
    let deletions = ((rest as isize + n as isize - m as isize) / 2) as usize;
    let insertions = rest - deletions;
    WerBreakdown {
        substitutions,
        deletions,
        insertions,
        reference_words: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(wer("a b c", "a b c").unwrap().wer(), 0.0);
        let w = wer("it's delightful", "its delightful").unwrap();
        assert_eq!((w.substitutions, w.deletions, w.insertions, w.wer()), (1, 0, 0, 0.5));
        let w = wer("a b c", "a c").unwrap();
        assert_eq!((w.deletions, w.errors()), (1, 1));
        assert!((w.wer() - 1.0 / 3.0).abs() < 1e-12);
        assert!(wer("  ,. ", "x").is_err());
        assert_eq!(wer("Hello, World!", "hello world").unwrap().errors(), 0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let w = wer("one two three", "").unwrap();
        assert_eq!((w.deletions, w.wer()), (3, 1.0));
    }
}
