//! Deterministic synthetic signals for desk-scale experiments: a harmonic
//! "speech" stand-in and a broadband "babble" stand-in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{design_lowpass_fir, AudioClip};

/// Sum of amplitude-modulated harmonics of a fixed fundamental. Harmonic
/// `k` carries weight `1/k` and a slow sinusoidal envelope with a random
/// rate and phase, so the signal has speech-like spectral lines with a
/// time-varying level. Peak-normalized to 0.7.
pub fn am_harmonics(
    duration_s: f64,
    sample_rate_hz: u32,
    fundamental_hz: f64,
    n_harmonics: usize,
    seed: u64,
) -> AudioClip {
    assert!(n_harmonics >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let dt = 1.0 / sample_rate_hz as f64;

    struct Partial {
        freq: f64,
        weight: f64,
        phase: f64,
        mod_rate: f64,
        mod_phase: f64,
    }
    let partials: Vec<Partial> = (1..=n_harmonics)
        .map(|k| Partial {
            freq: fundamental_hz * k as f64,
            weight: 1.0 / k as f64,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            mod_rate: rng.random_range(1.5..4.5),
            mod_phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            partials
                .iter()
                .map(|p| {
                    let env = 0.55 + 0.45 * (std::f64::consts::TAU * p.mod_rate * t + p.mod_phase).sin();
                    p.weight * env * (std::f64::consts::TAU * p.freq * t + p.phase).sin()
                })
                .sum()
        })
        .collect();
    normalize_peak(&mut samples, 0.7);
    AudioClip::new(samples, sample_rate_hz).expect("non-empty synthetic clip")
}

/// White noise pushed through a windowed-sinc low-pass at `cutoff_hz`.
/// Peak-normalized to 0.7.
pub fn filtered_noise(duration_s: f64, sample_rate_hz: u32, cutoff_hz: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let white: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    let cutoff = (cutoff_hz / sample_rate_hz as f64).min(0.499);
    let h = design_lowpass_fir(129, cutoff, 8.6);
    let delay = h.len() / 2;
    let mut samples = vec![0.0f64; n];
    for (i, out) in samples.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            let idx = i as isize + j as isize - delay as isize;
            if idx >= 0 && (idx as usize) < n {
                acc += hj * white[idx as usize];
            }
        }
        *out = acc;
    }
    normalize_peak(&mut samples, 0.7);
    AudioClip::new(samples, sample_rate_hz).expect("non-empty synthetic clip")
}

fn normalize_peak(samples: &mut [f64], peak: f64) {
    let max = samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if max > 0.0 {
        let scale = peak / max;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
}
