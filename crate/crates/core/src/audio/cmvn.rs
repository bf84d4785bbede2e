use serde::{Deserialize, Serialize};

use super::{AudioError, FeatureMatrix};

pub const CMVN_EPS: f64 = 1e-8;

/// Global per-coefficient mean and (population) variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: u64,
}

/// Two-pass fit over every frame of the corpus, accumulated in `f64`.
pub fn fit_cmvn<'a>(corpus: impl IntoIterator<Item = &'a FeatureMatrix> + Clone) -> Result<CmvnStats, AudioError> {
    let mut dim = None;
    let mut count = 0u64;
    let mut sum: Vec<f64> = Vec::new();
    for m in corpus.clone() {
        match dim {
            None => {
                dim = Some(m.dim());
                sum = vec![0.0; m.dim()];
            }
            Some(d) if d != m.dim() => {
                return Err(AudioError::Cmvn(format!("mixed feature dimensions {d} and {}", m.dim())));
            }
            _ => {}
        }
        for f in 0..m.frames() {
            for (s, &v) in sum.iter_mut().zip(m.row(f)) {
                *s += v as f64;
            }
        }
        count += m.frames() as u64;
    }
    if count < 2 {
        return Err(AudioError::Cmvn(format!("need at least 2 frames, got {count}")));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; mean.len()];
    for m in corpus {
        for f in 0..m.frames() {
            for ((acc, &v), mu) in var.iter_mut().zip(m.row(f)).zip(&mean) {
                let d = v as f64 - mu;
                *acc += d * d;
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    Ok(CmvnStats { mean, var, count })
}

/// `(x - mean) / sqrt(var + eps)` per coefficient.
pub fn apply_cmvn(f: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix, AudioError> {
    check_dim(f, stats)?;
    let scale: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + CMVN_EPS).sqrt()).collect();
    let mut out = f.clone();
    let d = f.dim();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % d;
        *v = ((*v as f64 - stats.mean[j]) * scale[j]) as f32;
    }
    Ok(out)
}

pub fn invert_cmvn(f: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix, AudioError> {
    check_dim(f, stats)?;
    let mut out = f.clone();
    let d = f.dim();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let j = i % d;
        *v = (*v as f64 * (stats.var[j] + CMVN_EPS).sqrt() + stats.mean[j]) as f32;
    }
    Ok(out)
}

fn check_dim(f: &FeatureMatrix, stats: &CmvnStats) -> Result<(), AudioError> {
    if f.dim() != stats.mean.len() {
        return Err(AudioError::Cmvn(format!(
            "features have {} coefficients, stats have {}",
            f.dim(),
            stats.mean.len()
        )));
    }
    Ok(())
}
