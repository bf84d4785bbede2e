use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AudioError, FeatureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecAugmentPolicy {
    pub time_warp_w: usize,
    pub freq_mask_f: usize,
    pub num_freq_masks: usize,
    pub time_mask_t: usize,
    pub time_mask_fraction: f64,
    pub num_time_masks: usize,
}

impl SpecAugmentPolicy {
    pub fn none() -> Self {
        Self {
            time_warp_w: 0,
            freq_mask_f: 0,
            num_freq_masks: 0,
            time_mask_t: 0,
            time_mask_fraction: 1.0,
            num_time_masks: 0,
        }
    }

    /// Two frequency and two time masks.
    pub fn ld() -> Self {
        Self {
            time_warp_w: 0,
            freq_mask_f: 27,
            num_freq_masks: 2,
            time_mask_t: 100,
            time_mask_fraction: 1.0,
            num_time_masks: 2,
        }
    }

    /// One frequency and one time mask.
    pub fn lb() -> Self {
        Self {
            num_freq_masks: 1,
            num_time_masks: 1,
            ..Self::ld()
        }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if !(0.0..=1.0).contains(&self.time_mask_fraction) {
            return Err(AudioError::Policy(format!(
                "time_mask_fraction must lie in [0, 1], got {}",
                self.time_mask_fraction
            )));
        }
        Ok(())
    }
}

/// Masks random frequency bands and time spans with 0 (the post-CMVN mean).
/// With `time_warp_w > 0` the time axis is first warped piecewise-linearly.
pub fn spec_augment(f: &FeatureMatrix, policy: &SpecAugmentPolicy, seed: u64) -> Result<FeatureMatrix, AudioError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = if policy.time_warp_w > 0 {
        time_warp(f, policy.time_warp_w, &mut rng)
    } else {
        f.clone()
    };
    let (n, d) = (out.frames(), out.dim());
    for _ in 0..policy.num_freq_masks {
        let width = rng.gen_range(0..=policy.freq_mask_f).min(d);
        let start = rng.gen_range(0..=d - width);
        for t in 0..n {
            for c in start..start + width {
                out.set(t, c, 0.0);
            }
        }
    }
    let cap = (policy.time_mask_fraction * n as f64).floor() as usize;
    for _ in 0..policy.num_time_masks {
        let width = rng.gen_range(0..=policy.time_mask_t).min(cap).min(n);
        let start = rng.gen_range(0..=n - width);
        for t in start..start + width {
            out.data_mut()[t * d..(t + 1) * d].fill(0.0);
        }
    }
    Ok(out)
}

/// Moves a random anchor frame `c` to `c + w` and linearly resamples both
/// sides. Too-short inputs are returned unchanged.
fn time_warp(f: &FeatureMatrix, w_max: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let n = f.frames();
    if n <= 2 * w_max + 1 {
        return f.clone();
    }
    let c = rng.gen_range(w_max..n - w_max) as f64;
    let w = rng.gen_range(-(w_max as i64)..=w_max as i64) as f64;
    let dest = (c + w).clamp(1.0, n as f64 - 2.0);
    let last = (n - 1) as f64;
    let mut out = FeatureMatrix::zeros(n, f.dim());
    for t in 0..n {
        let t = t as f64;
        let src = if t <= dest { t * c / dest } else { c + (t - dest) * (last - c) / (last - dest) };
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = (src - lo as f64) as f32;
        for k in 0..f.dim() {
            out.set(t as usize, k, f.get(lo, k) * (1.0 - frac) + f.get(hi, k) * frac);
        }
    }
    out
}
