//! Objective evaluation: global SNR, scale-invariant SDR, and segmental
//! SNR. These stand in for perceptual scores that need external systems.
//!
//! Exact matches return an infinity sentinel rather than an error so that
//! CSV emitters can print `+inf`.

use crate::audio_io::AudioClip;
use crate::dsp::FramingConfig;
use crate::error::{Error, Result};

/// Clamp bounds for per-frame SNR before averaging.
pub const SEGMENTAL_SNR_FLOOR_DB: f64 = -10.0;
pub const SEGMENTAL_SNR_CEIL_DB: f64 = 35.0;
/// Reference frames whose mean power falls below this are treated as
/// silence and excluded from the segmental average.
pub const SILENT_FRAME_POWER: f64 = 1e-8;

fn check_pair(reference: &AudioClip, estimate: &AudioClip) -> Result<()> {
    if reference.sample_rate_hz != estimate.sample_rate_hz {
        return Err(Error::RateMismatch(format!(
            "reference at {} Hz, estimate at {} Hz",
            reference.sample_rate_hz, estimate.sample_rate_hz
        )));
    }
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

/// `10 * log10(sum(ref^2) / sum((ref - est)^2))`. A perfect estimate
/// returns `+inf`.
pub fn snr_db(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    check_pair(reference, estimate)?;
    let ref_power: f64 = reference.samples.iter().map(|s| s * s).sum();
    if ref_power == 0.0 {
        return Err(Error::DegenerateInput("reference signal has zero power".into()));
    }
    let err_power: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if err_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (ref_power / err_power).log10())
}

/// Scale-invariant SDR: project the estimate onto the reference
/// (`s = <est, ref> / <ref, ref>`), then compare against `s * ref`.
/// Scaled copies of the reference return `+inf`; orthogonal estimates
/// return `-inf`.
pub fn si_sdr_db(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    check_pair(reference, estimate)?;
    let ref_energy: f64 = reference.samples.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(Error::DegenerateInput("reference signal has zero power".into()));
    }
    let dot: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| r * e)
        .sum();
    let scale = dot / ref_energy;
    let target_energy = scale * scale * ref_energy;
    let err_energy: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| {
            let d = e - scale * r;
            d * d
        })
        .sum();
    if err_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    if target_energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (target_energy / err_energy).log10())
}

/// Mean over frames of per-frame SNR, each clamped to [-10, 35] dB.
/// Silent reference frames are excluded; if every frame is silent the
/// metric is undefined.
pub fn segmental_snr_db(
    reference: &AudioClip,
    estimate: &AudioClip,
    cfg: &FramingConfig,
) -> Result<f64> {
    check_pair(reference, estimate)?;
    let count = cfg.frame_count(reference.len()).ok_or_else(|| {
        Error::TooShort(format!(
            "{} samples is below one frame ({})",
            reference.len(),
            cfg.frame_len
        ))
    })?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for k in 0..count {
        let start = k * cfg.hop;
        let r = &reference.samples[start..start + cfg.frame_len];
        let e = &estimate.samples[start..start + cfg.frame_len];
        let ref_power: f64 = r.iter().map(|s| s * s).sum::<f64>() / cfg.frame_len as f64;
        if ref_power < SILENT_FRAME_POWER {
            continue;
        }
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / cfg.frame_len as f64;
        let snr = if err == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (ref_power / err).log10()
        };
        sum += snr.clamp(SEGMENTAL_SNR_FLOOR_DB, SEGMENTAL_SNR_CEIL_DB);
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateInput("all reference frames are silent".into()));
    }
    Ok(sum / used as f64)
}

/// SNR before and after denoising, aligned on the denoised clip's support.
///
/// Denoising trims one hop from each edge, so `denoised[i]` lines up with
/// `clean[hop + i]` and `noisy[hop + i]`. Returns `(input_snr, output_snr)`
/// over that common interior.
pub fn aligned_snr_improvement_db(
    clean: &AudioClip,
    noisy: &AudioClip,
    denoised: &AudioClip,
    hop: usize,
) -> Result<(f64, f64)> {
    if clean.len() != noisy.len() {
        return Err(Error::Shape("clean and noisy lengths differ".into()));
    }
    if hop + denoised.len() > clean.len() {
        return Err(Error::Shape(format!(
            "denoised clip ({} samples at offset {hop}) overruns the reference ({})",
            denoised.len(),
            clean.len()
        )));
    }
    let span = denoised.len();
    let interior = |clip: &AudioClip| {
        AudioClip::new(clip.samples[hop..hop + span].to_vec(), clip.sample_rate_hz)
    };
    let clean_i = interior(clean)?;
    let input_snr = snr_db(&clean_i, &interior(noisy)?)?;
    let output_snr = snr_db(&clean_i, denoised)?;
    Ok((input_snr, output_snr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mix_at_snr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    #[test]
    fn snr_perfect_estimate_is_infinite() {
        let r = random_clip(500, 1);
        assert_eq!(snr_db(&r, &r).unwrap(), f64::INFINITY);
    }

    #[test]
    fn snr_equal_power_error_is_zero_db() {
        // error = est - ref = {-1, 1, 1, -1}: same energy as the reference.
        let r = AudioClip::new(vec![1.0, -1.0, 1.0, -1.0], 16000).unwrap();
        let est = AudioClip::new(vec![0.0, 0.0, 2.0, -2.0], 16000).unwrap();
        assert!((snr_db(&r, &est).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn snr_consistent_with_mixing() {
        let clean = random_clip(4000, 2);
        let noise = random_clip(4000, 3);
        let (mix, _) = mix_at_snr(&clean, &noise, 5.0).unwrap();
        let measured = snr_db(&clean, &mix).unwrap();
        assert!((measured - 5.0).abs() < 1e-9, "measured {measured}");
    }

    #[test]
    fn snr_zero_reference_is_degenerate() {
        let z = AudioClip::new(vec![0.0; 10], 16000).unwrap();
        let r = random_clip(10, 4);
        assert!(matches!(snr_db(&z, &r), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn si_sdr_scale_invariance() {
        let r = random_clip(300, 5);
        let doubled =
            AudioClip::new(r.samples.iter().map(|s| 2.0 * s).collect(), 16000).unwrap();
        assert_eq!(si_sdr_db(&r, &doubled).unwrap(), f64::INFINITY);

        let halved = AudioClip::new(r.samples.iter().map(|s| 0.5 * s).collect(), 16000).unwrap();
        assert_eq!(si_sdr_db(&r, &halved).unwrap(), f64::INFINITY);
    }

    #[test]
    fn si_sdr_orthogonal_estimate() {
        let r = AudioClip::new(vec![1.0, 0.0, 1.0, 0.0], 16000).unwrap();
        let e = AudioClip::new(vec![0.0, 1.0, 0.0, -1.0], 16000).unwrap();
        assert_eq!(si_sdr_db(&r, &e).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn si_sdr_matches_direct_formula() {
        let r = random_clip(700, 6);
        let e = random_clip(700, 7);
        let got = si_sdr_db(&r, &e).unwrap();
        // Independent evaluation with plain indexed loops.
        let mut dot = 0.0;
        let mut rr = 0.0;
        for i in 0..700 {
            dot += r.samples[i] * e.samples[i];
            rr += r.samples[i] * r.samples[i];
        }
        let s = dot / rr;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..700 {
            let t = s * r.samples[i];
            num += t * t;
            let d = e.samples[i] - t;
            den += d * d;
        }
        let expected = 10.0 * (num / den).log10();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn segmental_perfect_estimate_hits_clamp_ceiling() {
        let cfg = FramingConfig::new(64, 32, 16000).unwrap();
        let r = random_clip(1000, 8);
        assert_eq!(segmental_snr_db(&r, &r, &cfg).unwrap(), SEGMENTAL_SNR_CEIL_DB);
    }

    #[test]
    fn segmental_matches_naive_per_frame_loop() {
        let cfg = FramingConfig::new(64, 32, 16000).unwrap();
        let clean = random_clip(2000, 9);
        let mut est = clean.samples.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in est.iter_mut() {
            *s += rng.random_range(-0.05..0.05);
        }
        let est = AudioClip::new(est, 16000).unwrap();
        let got = segmental_snr_db(&clean, &est, &cfg).unwrap();
        // Independent naive loop.
        let count = cfg.frame_count(2000).unwrap();
        let mut sum = 0.0;
        let mut used = 0;
        for k in 0..count {
            let start = k * cfg.hop;
            let r = &clean.samples[start..start + cfg.frame_len];
            let e = &est.samples[start..start + cfg.frame_len];
            let pr: f64 = r.iter().map(|s| s * s).sum::<f64>() / cfg.frame_len as f64;
            if pr < SILENT_FRAME_POWER {
                continue;
            }
            let pe: f64 =
                r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / cfg.frame_len as f64;
            sum += (10.0 * (pr / pe).log10()).clamp(-10.0, 35.0);
            used += 1;
        }
        assert!((got - sum / used as f64).abs() < 1e-10);
    }

    #[test]
    fn segmental_all_silent_is_degenerate() {
        let cfg = FramingConfig::new(64, 32, 16000).unwrap();
        let silent = AudioClip::new(vec![1e-9; 500], 16000).unwrap();
        let est = random_clip(500, 12);
        assert!(matches!(
            segmental_snr_db(&silent, &est, &cfg),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn constant_five_db_frames_average_to_five_db() {
        // Build signals where every frame independently measures 5 dB by
        // making both signals frame-periodic: then each frame is identical
        // and the mean equals the per-frame value.
        let cfg = FramingConfig::new(64, 32, 16000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let period: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise_period: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reps = 40;
        let clean: Vec<f64> = (0..32 * reps).map(|i| period[i % 32]).collect();
        let pr: f64 = period.iter().map(|s| s * s).sum::<f64>();
        let pn: f64 = noise_period.iter().map(|s| s * s).sum::<f64>();
        let alpha = (pr / (pn * 10f64.powf(0.5))).sqrt();
        let est: Vec<f64> = (0..32 * reps)
            .map(|i| period[i % 32] + alpha * noise_period[i % 32])
            .collect();
        let clean = AudioClip::new(clean, 16000).unwrap();
        let est = AudioClip::new(est, 16000).unwrap();
        let got = segmental_snr_db(&clean, &est, &cfg).unwrap();
        assert!((got - 5.0).abs() < 1e-9, "got {got}");
    }
}
