//! Independent reference implementations used by the eval and acceptance
//! tests.

use std::collections::HashMap;

use duotrain::eval::{EvalError, Scorer};
use duotrain::text::{BOS_ID, EOS_ID, PAD_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Toy decoder whose next-token distribution is a seeded function of the
/// whole prefix.
pub struct ToyModel {
    pub vocab: usize,
    pub seed: u64,
    pub temperature: f32,
}

impl ToyModel {
    pub fn row(&self, prefix: &[u32]) -> Vec<f32> {
        let mut h: u64 = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in prefix {
            h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f32> = (0..self.vocab).map(|_| rng.gen_range(-1.0f32..1.0) * self.temperature).collect();
        let lse = logits.iter().map(|x| (*x as f64).exp()).sum::<f64>().ln();
        logits.iter().map(|&x| (x as f64 - lse) as f32).collect()
    }
}

impl Scorer for ToyModel {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>, EvalError> {
        Ok(prefixes.iter().map(|p| self.row(p)).collect())
    }
}

/// Fixed table of rows keyed by prefix; missing prefixes are uniform.
pub struct TableModel {
    pub vocab: usize,
    pub rows: HashMap<Vec<u32>, Vec<f32>>,
}

impl Scorer for TableModel {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>, EvalError> {
        Ok(prefixes
            .iter()
            .map(|p| {
                self.rows
                    .get(p)
                    .cloned()
                    .unwrap_or_else(|| vec![-(self.vocab as f32).ln(); self.vocab])
            })
            .collect())
    }
}

/// Best `(tokens, normalized score)` over every sequence of at most
/// `max_len` tokens ending in `<eos>`, found by enumeration.
pub fn exhaustive_best<S: Scorer>(scorer: &mut S, vocab: usize, max_len: usize) -> (Vec<u32>, f64) {
    let body: Vec<u32> = (0..vocab as u32).filter(|&v| v != PAD_ID && v != BOS_ID && v != EOS_ID).collect();
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in frontier {
            let mut full = seq.clone();
            full.push(EOS_ID);
            let score = sequence_log_prob(scorer, &full);
            let norm = score / full.len() as f64;
            if best.as_ref().map_or(true, |(_, b)| norm > *b) {
                best = Some((full, norm));
            }
            for &v in &body {
                let mut s = seq.clone();
                s.push(v);
                next.push(s);
            }
        }
        frontier = next;
    }
    best.unwrap()
}

pub fn sequence_log_prob<S: Scorer>(scorer: &mut S, tokens: &[u32]) -> f64 {
    let mut prefix = vec![BOS_ID];
    let mut total = 0.0;
    for &t in tokens {
        total += scorer.log_probs(&[prefix.clone()]).unwrap()[0][t as usize] as f64;
        prefix.push(t);
    }
    total
}

/// Greedy argmax decoding with the same banned ids and forced final `<eos>`.
pub fn greedy<S: Scorer>(scorer: &mut S, max_len: usize) -> Vec<u32> {
    let mut out = Vec::new();
    loop {
        let mut prefix = vec![BOS_ID];
        prefix.extend(&out);
        if out.len() + 1 == max_len {
            out.push(EOS_ID);
            return out;
        }
        let row = scorer.log_probs(&[prefix]).unwrap().remove(0);
        let mut arg = None;
        for (v, &lp) in row.iter().enumerate() {
            let v = v as u32;
            if v == PAD_ID || v == BOS_ID {
                continue;
            }
            if arg.map_or(true, |(_, b)| lp > b) {
                arg = Some((v, lp));
            }
        }
        let (v, _) = arg.unwrap();
        out.push(v);
        if v == EOS_ID {
            return out;
        }
    }
}

/// `(substitutions, deletions, insertions)` from a weighted edit distance
/// where a substitution is slightly cheaper than a unit edit, so among
/// minimum-edit alignments the one with most substitutions wins.
pub fn weighted_edit_counts(r: &[&str], h: &[&str]) -> (usize, usize, usize) {
    const UNIT: i64 = 1000;
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![(0i64, 0usize, 0usize, 0usize); m + 1]; n + 1];
    for i in 1..=n {
        d[i][0] = (UNIT * i as i64, 0, i, 0);
    }
    for j in 1..=m {
        d[0][j] = (UNIT * j as i64, 0, 0, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let mut opts = Vec::with_capacity(3);
            let p = d[i - 1][j - 1];
            if r[i - 1] == h[j - 1] {
                opts.push(p);
            } else {
                opts.push((p.0 + UNIT - 1, p.1 + 1, p.2, p.3));
            }
            let p = d[i - 1][j];
            opts.push((p.0 + UNIT, p.1, p.2 + 1, p.3));
            let p = d[i][j - 1];
            opts.push((p.0 + UNIT, p.1, p.2, p.3 + 1));
            d[i][j] = *opts.iter().min_by_key(|o| o.0).unwrap();
        }
    }
    let (_, s, del, ins) = d[n][m];
    (s, del, ins)
}

/// Direct corpus BLEU: intl-style tokens supplied by the caller, clipped
/// n-gram counts, exponential smoothing.
pub fn reference_bleu(refs: &[Vec<String>], hyps: &[Vec<String>]) -> f64 {
    let mut correct = [0f64; 4];
    let mut total = [0f64; 4];
    let (mut c, mut r) = (0f64, 0f64);
    for (rt, ht) in refs.iter().zip(hyps) {
        c += ht.len() as f64;
        r += rt.len() as f64;
        for n in 1..=4 {
            let count = |t: &[String]| {
                let mut m: HashMap<Vec<String>, usize> = HashMap::new();
                for i in 0..t.len().saturating_sub(n - 1) {
                    *m.entry(t[i..i + n].to_vec()).or_default() += 1;
                }
                m
            };
            let rc = count(rt);
            for (g, k) in count(ht) {
                correct[n - 1] += k.min(*rc.get(&g).unwrap_or(&0)) as f64;
            }
            total[n - 1] += ht.len().saturating_sub(n - 1) as f64;
        }
    }
    if correct.iter().all(|&x| x == 0.0) || c == 0.0 {
        return 0.0;
    }
    let mut k = 1.0;
    let mut log_sum = 0.0;
    for n in 0..4 {
        if total[n] == 0.0 {
            return 0.0;
        }
        let p = if correct[n] == 0.0 {
            k *= 2.0;
            1.0 / (k * total[n])
        } else {
            correct[n] / total[n]
        };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    100.0 * bp * (log_sum / 4.0).exp()
}

/// ASCII-only tokenizer: symbols are always split off; punctuation is split
/// off unless both neighbours are digits (or absent).
pub fn ascii_intl_tokens(line: &str) -> Vec<String> {
    const SYMBOLS: &str = "$+<=>^`|~";
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        let split = if SYMBOLS.contains(c) {
            true
        } else if c.is_ascii_punctuation() {
            prev.is_some_and(|p| !p.is_ascii_digit()) || next.is_some_and(|n| !n.is_ascii_digit())
        } else {
            false
        };
        if split {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().map(String::from).collect()
}

pub const BLEU_REFS: [&str; 20] = [
    "The cat sat on the mat.",
    "It's a beautiful day, isn't it?",
    "He paid $3.50 for the coffee.",
    "We arrived at 10:30 in the morning.",
    "The results were surprising (to say the least).",
    "She said: \"Never again!\"",
    "Prices rose by 12% last year.",
    "Berlin is the capital of Germany.",
    "Please send the report by Friday.",
    "The quick brown fox jumps over the lazy dog.",
    "I don't know what you mean.",
    "They've been working here since 2015.",
    "A new study shows that sleep matters.",
    "The meeting was postponed until next week.",
    "Can you help me with this problem?",
    "Rain is expected in the north tonight.",
    "The museum opens at nine o'clock.",
    "Our team won the final match 3-1.",
    "He reads two books every month.",
    "Thank you very much for your help!",
];

pub const BLEU_HYPS: [&str; 20] = [
    "The cat sat on a mat.",
    "It is a beautiful day, isn't it?",
    "He paid $3.50 for coffee.",
    "We arrived at 10:30 in the morning.",
    "The results were surprising, to say the least.",
    "She said: \"Never again.\"",
    "Prices rose 12% last year.",
    "Berlin is Germany's capital.",
    "Send the report by Friday please.",
    "The quick brown fox jumped over the lazy dog.",
    "I do not know what you mean.",
    "They have worked here since 2015.",
    "A study shows sleep matters.",
    "The meeting was moved to next week.",
    "Can you help me with this problem?",
    "Rain expected in the north tonight.",
    "The museum opens at 9 o'clock.",
    "Our team won the final 3-1.",
    "He reads two books each month.",
    "Thanks a lot for your help!",
];

/// Scores of the fixture above from an external reference scorer
/// (international tokenization, exponential smoothing).
pub const BLEU_FIXTURE_SCORE: f64 = 57.36304671770004;
pub const BLEU_FIXTURE_COUNTS: ([usize; 4], [usize; 4], usize, usize) = ([134, 93, 64, 41], [154, 134, 114, 94], 154, 166);

pub const ZERO4_REFS: [&str; 5] = [
    "the red car stops here",
    "a small dog barks loudly",
    "we eat bread at noon",
    "birds fly south in winter",
    "my old phone broke today",
];
pub const ZERO4_HYPS: [&str; 5] = [
    "here the car red stops",
    "loudly barks dog small a",
    "noon at bread eat we",
    "winter in south fly birds",
    "today broke phone old my",
];
pub const ZERO4_SCORE: f64 = 4.777213961021834;
