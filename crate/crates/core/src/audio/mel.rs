use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioError, FeatureMatrix, Waveform};

/// Front-end settings. Defaults: 25 ms Hann window every 10 ms at 16 kHz,
/// 512-point FFT, 80 triangular mel filters over 20 Hz - 8 kHz, natural log
/// floored at 1e-10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 80,
            f_min: 20.0,
            f_max: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if self.window == 0 || self.hop == 0 || self.n_mels == 0 || self.n_fft < self.window {
            return Err(AudioError::Config("window, hop and n_mels must be positive and n_fft >= window".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(AudioError::Config(format!(
                "mel range {}..{} Hz must lie within 0..{} Hz",
                self.f_min,
                self.f_max,
                self.sample_rate / 2
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(AudioError::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// `floor((len - window) / hop) + 1`, or 0 when shorter than one window.
pub fn frame_count(samples: usize, cfg: &FeatureConfig) -> usize {
    if samples < cfg.window {
        0
    } else {
        (samples - cfg.window) / cfg.hop + 1
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies: `n_mels + 2` points equally spaced on the mel scale.
fn mel_points(cfg: &FeatureConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Center frequency in Hz of each filter.
pub fn mel_center_frequencies(cfg: &FeatureConfig) -> Vec<f64> {
    mel_points(cfg)[1..=cfg.n_mels].to_vec()
}

/// `n_mels × (n_fft/2 + 1)` triangular weights evaluated at bin frequencies.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let pts = mel_points(cfg);
    let bins = cfg.n_fft / 2 + 1;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log mel filterbank energies of the power spectrum of each frame.
pub fn log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, AudioError> {
    if w.sample_rate != cfg.sample_rate {
        return Err(AudioError::Wav(format!(
            "{} Hz required, got {} Hz",
            cfg.sample_rate, w.sample_rate
        )));
    }
    let n = frame_count(w.samples.len(), cfg);
    if n == 0 {
        return Err(AudioError::TooShort {
            samples: w.samples.len(),
            needed: cfg.window,
        });
    }
    let hann: Vec<f64> = (0..cfg.window)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.window as f64).cos())
        .collect();
    let bank = mel_filterbank(cfg);
    let bins = cfg.n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; bins];
    let mut out = Vec::with_capacity(n * cfg.n_mels);
    for f in 0..n {
        let start = f * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..cfg.window {
            buf[i].re = w.samples[start + i] as f64 * hann[i];
        }
        fft.process(&mut buf);
        for k in 0..bins {
            power[k] = buf[k].norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            out.push(e.max(cfg.log_floor).ln() as f32);
        }
    }
    FeatureMatrix::new(n, cfg.n_mels, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform {
            samples,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = FeatureConfig::default();
        let f = log_mel(&wave(vec![0.0; 16_000]), &cfg).unwrap();
        assert_eq!((f.frames(), f.dim()), (98, 80));
        let floor = (1e-10f64).ln() as f32;
        assert!(f.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_rejected() {
        let cfg = FeatureConfig::default();
        assert!(matches!(
            log_mel(&wave(vec![0.0; 399]), &cfg),
            Err(AudioError::TooShort { needed: 400, .. })
        ));
        assert_eq!(log_mel(&wave(vec![0.0; 400]), &cfg).unwrap().frames(), 1);
    }

    #[test]
    fn filters_cover_range() {
        let cfg = FeatureConfig::default();
        let c = mel_center_frequencies(&cfg);
        assert_eq!(c.len(), 80);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c[0] > 20.0 && c[79] < 8000.0);
        assert!(mel_filterbank(&cfg).iter().all(|f| f.iter().any(|&w| w > 0.0)));
    }
}
