//! WAV ingestion/emission, channel down-mixing, and integer-factor
//! decimation to the working sample rate.
//!
//! Only RIFF/WAVE with 16-bit PCM and 1 or 2 channels is accepted; anything
//! else is rejected loudly so that the rest of the crate can assume
//! bit-exact sample handling.

use std::path::Path;

use crate::error::{Error, Result};

/// Samples decode as `i16 / 32768`, so the encode side scales by the same
/// constant to keep the round trip inside one quantization step.
const PCM_SCALE: f64 = 32768.0;

/// A mono buffer of amplitudes plus its sample rate. The unit of all I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput("clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::DegenerateInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("clip contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Read a 16-bit PCM WAV file, down-mixing stereo to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_wav(&bytes)
}

/// Decode an in-memory WAV image. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavFormat("not a RIFF/WAVE file".into()));
    }

    struct Fmt {
        audio_format: u16,
        channels: u16,
        sample_rate: u32,
        bits: u16,
    }
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;

    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::WavFormat(format!("truncated chunk {:?}", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];

        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::WavFormat("fmt chunk too small".into()));
                }
                fmt = Some(Fmt {
                    audio_format: u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    channels: u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    bits: u16::from_le_bytes(body[14..16].try_into().unwrap()),
                });
            }
            b"data" => data = Some(body),
            _ => {} // skip unknown chunks
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;

    if fmt.audio_format != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "audio format {} (only PCM = 1 is supported)",
            fmt.audio_format
        )));
    }
    if fmt.bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}-bit samples (only 16-bit is supported)",
            fmt.bits
        )));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (only 1 or 2 are supported)",
            fmt.channels
        )));
    }

    let ch = fmt.channels as usize;
    let frame_bytes = 2 * ch;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(Error::WavFormat("data chunk holds no samples".into()));
    }

    let mut channels = vec![Vec::with_capacity(n_frames); ch];
    for f in 0..n_frames {
        for (c, channel) in channels.iter_mut().enumerate() {
            let off = f * frame_bytes + 2 * c;
            let v = i16::from_le_bytes(data[off..off + 2].try_into().unwrap());
            channel.push(v as f64 / PCM_SCALE);
        }
    }
    to_mono(&channels, fmt.sample_rate)
}

/// Collapse 1 or 2 channels to mono by per-index arithmetic mean.
/// A mono input comes back unchanged.
pub fn to_mono(channels: &[Vec<f64>], sample_rate_hz: u32) -> Result<AudioClip> {
    match channels {
        [mono] => AudioClip::new(mono.clone(), sample_rate_hz),
        [left, right] => {
            if left.len() != right.len() {
                return Err(Error::Shape(format!(
                    "channel lengths differ: {} vs {}",
                    left.len(),
                    right.len()
                )));
            }
            let mixed = left.iter().zip(right).map(|(l, r)| 0.5 * (l + r)).collect();
            AudioClip::new(mixed, sample_rate_hz)
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{} channels (only 1 or 2 are supported)",
            channels.len()
        ))),
    }
}

/// Write a clip as mono 16-bit PCM. Amplitudes are clamped to [-1, 1] before
/// quantization; the write happens through a temp file + rename so a failed
/// write never leaves a partial file behind.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, &bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Encode a clip to an in-memory WAV image.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Integer-factor downsampling with a windowed-sinc anti-alias filter.
/// Factor 1 is the identity.
pub fn decimate(clip: &AudioClip, factor: u32) -> Result<AudioClip> {
    if factor == 0 {
        return Err(Error::DegenerateInput("decimation factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(clip.clone());
    }
    if !clip.sample_rate_hz.is_multiple_of(factor) {
        return Err(Error::UnsupportedRate(format!(
            "rate {} is not divisible by factor {}",
            clip.sample_rate_hz, factor
        )));
    }

    let f = factor as usize;
    // Cutoff at 0.5/factor of the source Nyquist, i.e. 0.25/factor cycles
    // per input sample, with at least 64 taps per decimation factor.
    let taps = 64 * f + 1;
    let h = design_lowpass_fir(taps, 0.25 / f as f64, 8.6);
    let delay = taps / 2;

    let x = &clip.samples;
    let n = x.len();
    let out_len = n.div_ceil(f);
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let center = m * f;
        let mut acc = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            let idx = center as isize + j as isize - delay as isize;
            if idx >= 0 && (idx as usize) < n {
                acc += hj * x[idx as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, clip.sample_rate_hz / factor)
}

/// Kaiser-windowed sinc low-pass prototype, normalized to unit DC gain.
/// `cutoff` is in cycles per sample.
pub(crate) fn design_lowpass_fir(taps: usize, cutoff: f64, kaiser_beta: f64) -> Vec<f64> {
    assert!(taps >= 3 && taps % 2 == 1, "taps must be odd and >= 3");
    let m = (taps - 1) as f64 / 2.0;
    let i0_beta = bessel_i0(kaiser_beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - m;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (2.0 * std::f64::consts::PI * cutoff * t)
            };
            let r = 2.0 * n as f64 / (taps - 1) as f64 - 1.0;
            let window = bessel_i0(kaiser_beta * (1.0 - r * r).sqrt()) / i0_beta;
            2.0 * cutoff * sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..=50 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
