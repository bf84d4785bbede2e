use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::EvalError;

const MAX_ORDER: usize = 4;

/// Corpus BLEU on a 0..100 scale with its sufficient statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

fn intl_rules() -> &'static [(Regex, &'static str); 3] {
    static RULES: OnceLock<[(Regex, &'static str); 3]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"(\P{N})(\p{P})").unwrap(), "$1 $2 "),
            (Regex::new(r"(\p{P})(\P{N})").unwrap(), " $1 $2"),
            (Regex::new(r"(\p{S})").unwrap(), " $1 "),
        ]
    })
}

/// International tokenization: punctuation not adjacent to digits and all
/// symbols become separate tokens. Case is preserved.
pub fn tokenize_intl(line: &str) -> Vec<String> {
    let mut s = line.to_string();
    for (re, rep) in intl_rules() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(String::from).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

/// Case-sensitive corpus BLEU against one reference per hypothesis, with
/// exponential smoothing of zero n-gram matches.
pub fn bleu<R: AsRef<str>, H: AsRef<str>>(references: &[R], hypotheses: &[H]) -> Result<BleuScore, EvalError> {
    if references.len() != hypotheses.len() {
        return Err(EvalError::LengthMismatch {
            references: references.len(),
            hypotheses: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        let r = tokenize_intl(r.as_ref());
        let h = tokenize_intl(h.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(&r, n);
            for (g, c) in ngram_counts(&h, n) {
                correct[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    Ok(compute(correct, total, hyp_len, ref_len))
}

fn compute(correct: [usize; MAX_ORDER], total: [usize; MAX_ORDER], hyp_len: usize, ref_len: usize) -> BleuScore {
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_ORDER];
    let mut score = 0.0;
    if correct.iter().any(|&c| c > 0) {
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if total[n] == 0 {
                break;
            }
            precisions[n] = if correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * total[n] as f64)
            } else {
                100.0 * correct[n] as f64 / total[n] as f64
            };
        }
        if precisions.iter().all(|&p| p > 0.0) {
            let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            score = brevity_penalty * mean_log.exp();
        }
    }
    BleuScore {
        score,
        precisions,
        brevity_penalty,
        correct,
        total,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
    }
}
