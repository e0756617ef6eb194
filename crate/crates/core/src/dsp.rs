//! Pre- and post-processing around the network: SNR-controlled mixing,
//! framing with a periodic Hann window plus scalar normalization, and
//! overlap-add reconstruction.
//!
//! The framing uses 20 ms frames with 50 % overlap. The periodic Hann
//! window makes shifted copies at half-frame hop sum to exactly 1, so
//! summing denormalized frames at their original offsets reconstructs
//! interior samples without dividing the window back out.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Frame geometry. The hop is pinned to half the frame length; anything
/// else would break the constant-overlap-add reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

impl FramingConfig {
    pub fn new(frame_len: usize, hop: usize, sample_rate_hz: u32) -> Result<Self> {
        if frame_len == 0 || !frame_len.is_multiple_of(2) {
            return Err(Error::DegenerateInput(format!(
                "frame_len must be positive and even, got {frame_len}"
            )));
        }
        if hop != frame_len / 2 {
            return Err(Error::DegenerateInput(format!(
                "hop must be frame_len/2 ({}, got {hop})",
                frame_len / 2
            )));
        }
        if sample_rate_hz == 0 {
            return Err(Error::DegenerateInput("sample rate must be positive".into()));
        }
        Ok(Self { frame_len, hop, sample_rate_hz })
    }

    /// Number of whole frames in a signal of `len` samples, or None when
    /// the signal is shorter than one frame.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_len {
            None
        } else {
            Some((len - self.frame_len) / self.hop + 1)
        }
    }
}

impl Default for FramingConfig {
    /// 20 ms frames at 16 kHz with 50 % overlap.
    fn default() -> Self {
        Self { frame_len: 320, hop: 160, sample_rate_hz: 16000 }
    }
}

/// Scalar mean/std of the entire clean training speech, broadcast
/// element-wise during normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "norm stats must be finite with std > 0 (mean {mean}, std {std})"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Identity normalization (mean 0, std 1).
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Windowed, normalized frames: one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frames: Array2<f64>,
    pub config: FramingConfig,
    pub normalized: bool,
}

impl FrameBatch {
    pub fn count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_len(&self) -> usize {
        self.frames.ncols()
    }
}

/// Periodic Hann window: `w[n] = 0.5 * (1 - cos(2*pi*n/len))`.
/// Shifted copies at hop = len/2 sum to exactly 1.
pub fn hann_window(frame_len: usize) -> Vec<f64> {
    assert!(frame_len >= 2 && frame_len.is_multiple_of(2), "frame_len must be even and >= 2");
    (0..frame_len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos()))
        .collect()
}

/// Additively combine clean speech with noise at a requested SNR.
///
/// The noise is truncated from its start to the clean length, scaled by
/// `alpha = sqrt(P_clean / (P_noise * 10^(snr_db/10)))`, and added. Returns
/// the mixture and the applied scale. `snr_db = +inf` yields scale 0 (the
/// mixture equals the clean signal).
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<(AudioClip, f64)> {
    mix_with_offset(clean, noise, snr_db, 0)
}

/// Like [`mix_at_snr`] but with a seeded random offset into the noise,
/// for runs that want different noise segments while staying reproducible.
pub fn mix_at_snr_seeded(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    seed: u64,
) -> Result<(AudioClip, f64)> {
    if noise.len() < clean.len() {
        return Err(Error::DegenerateInput(format!(
            "noise ({} samples) is shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    let span = noise.len() - clean.len();
    let offset = if span == 0 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..=span)
    };
    mix_with_offset(clean, noise, snr_db, offset)
}

fn mix_with_offset(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    offset: usize,
) -> Result<(AudioClip, f64)> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::RateMismatch(format!(
            "clean at {} Hz, noise at {} Hz",
            clean.sample_rate_hz, noise.sample_rate_hz
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::Numeric("snr_db is NaN".into()));
    }
    let n = clean.len();
    if noise.len() < offset + n {
        return Err(Error::DegenerateInput(format!(
            "noise ({} samples) cannot cover clean ({} samples) at offset {offset}",
            noise.len(),
            n
        )));
    }
    let noise_seg = &noise.samples[offset..offset + n];

    let p_clean = mean_power(&clean.samples);
    let p_noise = mean_power(noise_seg);
    if p_clean == 0.0 || p_noise == 0.0 {
        return Err(Error::DegenerateInput(
            "clean and noise must both have nonzero power".into(),
        ));
    }

    let alpha = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed: Vec<f64> = clean
        .samples
        .iter()
        .zip(noise_seg)
        .map(|(c, v)| c + alpha * v)
        .collect();
    Ok((AudioClip::new(mixed, clean.sample_rate_hz)?, alpha))
}

fn mean_power(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Scalar mean and population standard deviation over all samples of the
/// clean training signal (two-pass).
pub fn compute_norm_stats(clip: &AudioClip) -> Result<NormStats> {
    let n = clip.len() as f64;
    let mean = clip.samples.iter().sum::<f64>() / n;
    let var = clip.samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "training speech has zero or non-finite variance ({var})"
        )));
    }
    NormStats::new(mean, var.sqrt())
}

/// Split a clip into windowed, normalized frames. Frame `k` covers samples
/// `[k*hop, k*hop + frame_len)`; a trailing remainder that does not fill a
/// whole frame is dropped.
pub fn frame_signal(clip: &AudioClip, cfg: &FramingConfig, stats: &NormStats) -> Result<FrameBatch> {
    let count = cfg.frame_count(clip.len()).ok_or_else(|| {
        Error::TooShort(format!(
            "clip of {} samples is shorter than one frame ({})",
            clip.len(),
            cfg.frame_len
        ))
    })?;
    let window = hann_window(cfg.frame_len);
    let mut frames = Array2::zeros((count, cfg.frame_len));
    for k in 0..count {
        let start = k * cfg.hop;
        let src = &clip.samples[start..start + cfg.frame_len];
        let mut row = frames.row_mut(k);
        for (n, out) in row.iter_mut().enumerate() {
            *out = (src[n] * window[n] - stats.mean) / stats.std;
        }
    }
    Ok(FrameBatch { frames, config: *cfg, normalized: true })
}

/// Denormalize frames and sum them at their original offsets. The first and
/// last hop-length regions only ever see a partial window sum, so they are
/// trimmed from the returned clip; everything in between reconstructs the
/// covered signal exactly.
pub fn overlap_add(batch: &FrameBatch, stats: &NormStats) -> Result<AudioClip> {
    let raw = overlap_add_raw(batch, stats)?;
    let hop = batch.config.hop;
    let interior = raw[hop..raw.len() - hop].to_vec();
    AudioClip::new(interior, batch.config.sample_rate_hz)
}

/// Untrimmed overlap-add: `(count-1)*hop + frame_len` samples covering the
/// whole framed region, with attenuated edges still present.
pub(crate) fn overlap_add_raw(batch: &FrameBatch, stats: &NormStats) -> Result<Vec<f64>> {
    if !batch.normalized {
        return Err(Error::InconsistentFrames(
            "overlap_add expects normalized frames".into(),
        ));
    }
    if batch.frame_len() != batch.config.frame_len {
        return Err(Error::InconsistentFrames(format!(
            "frame width {} does not match config frame_len {}",
            batch.frame_len(),
            batch.config.frame_len
        )));
    }
    let count = batch.count();
    if count < 2 {
        return Err(Error::TooShort(format!(
            "overlap-add needs at least 2 frames, got {count}"
        )));
    }
    let hop = batch.config.hop;
    let frame_len = batch.config.frame_len;
    let mut out = vec![0.0f64; (count - 1) * hop + frame_len];
    for (k, row) in batch.frames.rows().into_iter().enumerate() {
        let base = k * hop;
        for (n, v) in row.iter().enumerate() {
            out[base + n] += v * stats.std + stats.mean;
        }
    }
    Ok(out)
}
