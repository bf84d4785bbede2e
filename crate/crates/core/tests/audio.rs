use duotrain::audio::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tone(hz: f64, samples: usize) -> Waveform {
    Waveform {
        samples: (0..samples)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin()) as f32)
            .collect(),
        sample_rate: 16_000,
    }
}

/// Filter centers from the HTK mel formula, written out independently.
fn oracle_centers() -> Vec<f64> {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let (lo, hi) = (mel(20.0), mel(8000.0));
    (1..=80).map(|i| inv(lo + (hi - lo) * i as f64 / 81.0)).collect()
}

#[test]
fn centers_match_oracle() {
    let ours = mel_center_frequencies(&FeatureConfig::default());
    for (a, b) in ours.iter().zip(oracle_centers()) {
        // 1127 ln(.) and 2595 log10(.) agree to ~1e-5 relative.
        assert!((a - b).abs() < 1e-4 * b, "{a} vs {b}");
    }
}

#[test]
fn tone_peaks_at_nearest_filter() {
    let centers = oracle_centers();
    let nearest = (0..80)
        .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
        .unwrap();
    let f = log_mel(&tone(1000.0, 16_000), &FeatureConfig::default()).unwrap();
    for t in 0..f.frames() {
        let row = f.row(t);
        let argmax = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, nearest, "frame {t}");
    }
}

#[test]
fn frame_count_on_random_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = FeatureConfig::default();
    for _ in 0..50 {
        let len = rng.gen_range(400..40_000);
        let f = log_mel(&tone(440.0, len), &cfg).unwrap();
        assert_eq!(f.frames(), (len - 400) / 160 + 1, "len {len}");
    }
}

#[test]
fn log_mel_is_deterministic() {
    let cfg = FeatureConfig::default();
    let w = tone(313.0, 5000);
    assert_eq!(log_mel(&w, &cfg).unwrap(), log_mel(&w, &cfg).unwrap());
}

fn random_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureMatrix {
    let shift: Vec<f32> = (0..dim).map(|_| rng.gen_range(-20.0..5.0)).collect();
    let data = (0..frames * dim).map(|i| shift[i % dim] + rng.gen_range(-3.0..3.0)).collect();
    FeatureMatrix::new(frames, dim, data).unwrap()
}

#[test]
fn cmvn_standardizes_fitting_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus: Vec<FeatureMatrix> = (0..5).map(|i| random_features(&mut rng, 30 + i * 7, 80)).collect();
    let stats = fit_cmvn(&corpus).unwrap();
    let normed: Vec<FeatureMatrix> = corpus.iter().map(|m| apply_cmvn(m, &stats).unwrap()).collect();
    let total: usize = normed.iter().map(|m| m.frames()).sum();
    for k in 0..80 {
        let vals: Vec<f64> = normed.iter().flat_map(|m| (0..m.frames()).map(move |t| m.get(t, k) as f64)).collect();
        let mean = vals.iter().sum::<f64>() / total as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / total as f64;
        assert!(mean.abs() < 1e-6, "dim {k}: mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "dim {k}: var {var}");
    }
    for (m, n) in corpus.iter().zip(&normed) {
        let back = invert_cmvn(n, &stats).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

/// Zeroed columns / rows of a matrix that has no zeros to begin with.
fn zero_lines(m: &FeatureMatrix) -> (usize, usize) {
    let rows = (0..m.frames()).filter(|&t| m.row(t).iter().all(|&v| v == 0.0)).count();
    let cols = (0..m.dim()).filter(|&k| (0..m.frames()).all(|t| m.get(t, k) == 0.0)).count();
    (cols, rows)
}

#[test]
fn ld_policy_mask_budget() {
    let m = FeatureMatrix::new(98, 80, (0..98 * 80).map(|i| 1.0 + (i % 13) as f32).collect()).unwrap();
    let mut saw_masking = false;
    for seed in 0..100 {
        let out = spec_augment(&m, &SpecAugmentPolicy::ld(), seed).unwrap();
        let (freq, time) = zero_lines(&out);
        // A full-width time mask also zeroes every frequency line, so count
        // frequency lines only when some frame survives.
        if time < 98 {
            assert!(freq <= 54, "seed {seed}: {freq} frequency lines");
        }
        assert!(time <= 200, "seed {seed}: {time} frames");
        saw_masking |= freq > 0 || time > 0;
    }
    assert!(saw_masking);
}

proptest! {
    #[test]
    fn masking_only_zeroes(frames in 1usize..60, dim in 1usize..20, seed in any::<u64>(), f in 0usize..10, mf in 0usize..3, t in 0usize..30, mt in 0usize..3, p in 0.0f64..=1.0) {
        let m = FeatureMatrix::new(frames, dim, (0..frames * dim).map(|i| 0.5 + i as f32).collect()).unwrap();
        let policy = SpecAugmentPolicy { time_warp_w: 0, freq_mask_f: f, num_freq_masks: mf, time_mask_t: t, time_mask_fraction: p, num_time_masks: mt };
        let out = spec_augment(&m, &policy, seed).unwrap();
        prop_assert_eq!(&out, &spec_augment(&m, &policy, seed).unwrap());
        prop_assert_eq!((out.frames(), out.dim()), (frames, dim));
        for (a, b) in m.data().iter().zip(out.data()) {
            prop_assert!(a == b || *b == 0.0);
        }
        let (freq, time) = zero_lines(&out);
        let cap = (p * frames as f64).floor() as usize;
        if freq < dim {
            prop_assert!(time <= mt * cap.min(t));
        }
    }

    #[test]
    fn feature_file_round_trip(frames in 0usize..20, dim in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = FeatureMatrix::new(frames, dim, (0..frames * dim).map(|_| rng.gen::<f32>() * 100.0 - 50.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.feat");
        write_features(&p, &m).unwrap();
        prop_assert_eq!(read_features(&p).unwrap(), m);
    }
}

#[test]
fn wav_file_round_trip_through_features() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let w = tone(700.0, 8000);
    write_wav(&p, &w).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.samples.len(), 8000);
    for (a, b) in w.samples.iter().zip(&back.samples) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
}
