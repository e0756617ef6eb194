//! End-to-end glue: dataset manifests and pair preparation, binary
//! checkpoints, and the full denoise path for arbitrary-length audio.
//!
//! Checkpoint format (all little-endian): magic `FCSE`, u32 version,
//! framing config (u32 frame_len/hop/rate), normalization stats and the
//! training SNR tag as f64, seed as u64, batchnorm epsilon/momentum as
//! f64, a u32 layer count followed by per-layer descriptors, the f32
//! parameter payload in declared layer order, and a trailing 64-bit
//! FNV-1a hash of everything before it.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};

use crate::audio_io::{decimate, read_wav, AudioClip};
use crate::dsp::{frame_signal, mix_at_snr, mix_at_snr_seeded, overlap_add, FrameBatch, FramingConfig, NormStats};
use crate::error::{Error, Result};
use crate::nn::{LayerParams, LayerSpec, Model, ModelSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCSE";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Frames per forward pass while denoising, to bound memory on long input.
pub const DENOISE_BATCH_FRAMES: usize = 128;

/// Everything needed for standalone inference: model parameters plus the
/// normalization stats and framing the model was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub stats: NormStats,
    pub framing: FramingConfig,
    /// SNR the training mixtures were generated at, in dB.
    pub snr_tag_db: f64,
    /// Seed the model was initialized with.
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        model: Model<f32>,
        stats: NormStats,
        framing: FramingConfig,
        snr_tag_db: f64,
        seed: u64,
    ) -> Result<Self> {
        if model.spec().frame_len != framing.frame_len {
            return Err(Error::Checkpoint(format!(
                "model frame_len {} vs framing frame_len {}",
                model.spec().frame_len,
                framing.frame_len
            )));
        }
        Ok(Self { model, stats, framing, snr_tag_db, seed })
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.framing.frame_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.framing.hop as u32).to_le_bytes());
        out.extend_from_slice(&self.framing.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&self.stats.mean.to_le_bytes());
        out.extend_from_slice(&self.stats.std.to_le_bytes());
        out.extend_from_slice(&self.snr_tag_db.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.model.bn_epsilon as f64).to_le_bytes());
        out.extend_from_slice(&(self.model.bn_momentum as f64).to_le_bytes());

        let spec = self.model.spec();
        out.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_len } => {
                    out.extend_from_slice(&0u32.to_le_bytes());
                    out.extend_from_slice(&(in_channels as u32).to_le_bytes());
                    out.extend_from_slice(&(out_channels as u32).to_le_bytes());
                    out.extend_from_slice(&(kernel_len as u32).to_le_bytes());
                }
                LayerSpec::BatchNorm { channels } => {
                    out.extend_from_slice(&1u32.to_le_bytes());
                    out.extend_from_slice(&(channels as u32).to_le_bytes());
                }
                LayerSpec::PRelu { channels } => {
                    out.extend_from_slice(&2u32.to_le_bytes());
                    out.extend_from_slice(&(channels as u32).to_le_bytes());
                }
            }
        }

        for layer in &self.model.layers {
            match layer {
                LayerParams::Conv { weight, bias } => {
                    push_f32s(&mut out, weight.as_slice().expect("standard layout"));
                    push_f32s(&mut out, bias.as_slice().expect("standard layout"));
                }
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    push_f32s(&mut out, gamma.as_slice().expect("standard layout"));
                    push_f32s(&mut out, beta.as_slice().expect("standard layout"));
                    push_f32s(&mut out, running_mean.as_slice().expect("standard layout"));
                    push_f32s(&mut out, running_var.as_slice().expect("standard layout"));
                }
                LayerParams::PRelu { alpha } => {
                    push_f32s(&mut out, alpha.as_slice().expect("standard layout"));
                }
            }
        }

        let hash = fnv1a64(&out);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Checkpoint("file too small".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored_hash = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored_hash {
            return Err(Error::Checkpoint("integrity hash mismatch".into()));
        }

        let mut r = ByteReader::new(body);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let frame_len = r.u32()? as usize;
        let hop = r.u32()? as usize;
        let rate = r.u32()?;
        let framing = FramingConfig::new(frame_len, hop, rate)
            .map_err(|e| Error::Checkpoint(format!("framing: {e}")))?;
        let mean = r.f64()?;
        let std = r.f64()?;
        let stats =
            NormStats::new(mean, std).map_err(|e| Error::Checkpoint(format!("stats: {e}")))?;
        let snr_tag_db = r.f64()?;
        let seed = r.u64()?;
        let bn_epsilon = r.f64()?;
        let bn_momentum = r.f64()?;

        let n_layers = r.u32()? as usize;
        let mut layers_spec = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let kind = r.u32()?;
            layers_spec.push(match kind {
                0 => LayerSpec::Conv1d {
                    in_channels: r.u32()? as usize,
                    out_channels: r.u32()? as usize,
                    kernel_len: r.u32()? as usize,
                },
                1 => LayerSpec::BatchNorm { channels: r.u32()? as usize },
                2 => LayerSpec::PRelu { channels: r.u32()? as usize },
                k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
            });
        }
        let spec = ModelSpec::new(frame_len, layers_spec)
            .map_err(|e| Error::Checkpoint(format!("spec: {e}")))?;

        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match *layer {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_len } => {
                    let weight = r.f32s(out_channels * in_channels * kernel_len)?;
                    let bias = r.f32s(out_channels)?;
                    LayerParams::Conv {
                        weight: Array3::from_shape_vec(
                            (out_channels, in_channels, kernel_len),
                            weight,
                        )
                        .expect("length checked"),
                        bias: Array1::from_vec(bias),
                    }
                }
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm {
                    gamma: Array1::from_vec(r.f32s(channels)?),
                    beta: Array1::from_vec(r.f32s(channels)?),
                    running_mean: Array1::from_vec(r.f32s(channels)?),
                    running_var: Array1::from_vec(r.f32s(channels)?),
                },
                LayerSpec::PRelu { channels } => LayerParams::PRelu {
                    alpha: Array2::from_shape_vec(
                        (channels, frame_len),
                        r.f32s(channels * frame_len)?,
                    )
                    .expect("length checked"),
                },
            });
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after parameter payload".into()));
        }

        let model = Model::from_parts(
            spec,
            layers,
            bn_epsilon as f32,
            bn_momentum as f32,
        )?;
        Checkpoint::new(model, stats, framing, snr_tag_db, seed)
    }

    /// Atomic write: serialize, then temp file + rename, so a failed save
    /// never leaves a partial checkpoint on disk.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        std::io::Write::write_all(&mut tmp, &bytes)?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::from_bytes(&bytes)
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetRole {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for DatasetRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Manifest(format!("unknown role '{other}'"))),
        }
    }
}

/// Plain-text dataset description: `key = value` lines with `#` comments.
/// `clean` and `noise` may repeat to concatenate several files; `snr_db`
/// accepts `inf` for a noise-free set. Relative paths resolve against the
/// manifest's own directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub clean: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub snr_db: f64,
    pub role: DatasetRole,
    pub noise_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut clean = Vec::new();
        let mut noise = Vec::new();
        let mut snr_db = None;
        let mut role = None;
        let mut noise_seed = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Manifest(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "clean" => clean.push(base_dir.join(value)),
                "noise" => noise.push(base_dir.join(value)),
                "snr_db" => {
                    let v = match value {
                        "inf" | "+inf" => f64::INFINITY,
                        v => v.parse().map_err(|_| {
                            Error::Manifest(format!("line {}: bad snr_db '{v}'", lineno + 1))
                        })?,
                    };
                    snr_db = Some(v);
                }
                "role" => role = Some(value.parse::<DatasetRole>()?),
                "noise_seed" => {
                    noise_seed = Some(value.parse().map_err(|_| {
                        Error::Manifest(format!("line {}: bad noise_seed '{value}'", lineno + 1))
                    })?)
                }
                other => {
                    return Err(Error::Manifest(format!("line {}: unknown key '{other}'", lineno + 1)))
                }
            }
        }
        let manifest = Self {
            clean,
            noise,
            snr_db: snr_db.ok_or_else(|| Error::Manifest("missing snr_db".into()))?,
            role: role.ok_or_else(|| Error::Manifest("missing role".into()))?,
            noise_seed,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::parse(&text, base)?;
        for file in manifest.clean.iter().chain(&manifest.noise) {
            if !file.is_file() {
                return Err(Error::Manifest(format!(
                    "{}: referenced file {} does not exist",
                    path.display(),
                    file.display()
                )));
            }
        }
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        if self.clean.is_empty() {
            return Err(Error::Manifest("manifest lists no clean files".into()));
        }
        if self.noise.is_empty() {
            return Err(Error::Manifest("manifest lists no noise files".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Manifest("snr_db must not be NaN".into()));
        }
        Ok(())
    }
}

/// Clips loaded from a manifest, brought to the working rate and mixed.
pub struct PreparedClips {
    pub clean: AudioClip,
    pub mixture: AudioClip,
    pub noise_scale: f64,
}

/// Read a WAV and bring it to `target_rate` by integer-factor decimation.
pub fn load_clip_at_rate(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let clip = read_wav(path)?;
    if clip.sample_rate_hz == target_rate {
        Ok(clip)
    } else if clip.sample_rate_hz % target_rate == 0 {
        decimate(&clip, clip.sample_rate_hz / target_rate)
    } else {
        Err(Error::UnsupportedRate(format!(
            "{}: {} Hz is not an integer multiple of {} Hz",
            path.display(),
            clip.sample_rate_hz,
            target_rate
        )))
    }
}

fn read_concat_at_rate(paths: &[PathBuf], target_rate: u32) -> Result<AudioClip> {
    let mut samples = Vec::new();
    for path in paths {
        let clip = load_clip_at_rate(path, target_rate)?;
        samples.extend_from_slice(&clip.samples);
    }
    AudioClip::new(samples, target_rate)
}

/// Load, decimate, concatenate, and mix the manifest's files.
pub fn prepare_clips(manifest: &DatasetManifest, cfg: &FramingConfig) -> Result<PreparedClips> {
    let clean = read_concat_at_rate(&manifest.clean, cfg.sample_rate_hz)?;
    let noise = read_concat_at_rate(&manifest.noise, cfg.sample_rate_hz)?;
    let (mixture, noise_scale) = match manifest.noise_seed {
        Some(seed) => mix_at_snr_seeded(&clean, &noise, manifest.snr_db, seed)?,
        None => mix_at_snr(&clean, &noise, manifest.snr_db)?,
    };
    Ok(PreparedClips { clean, mixture, noise_scale })
}

/// Mix per the manifest and frame both the mixture and the clean target
/// with identical windowing and normalization. Frame counts always match.
pub fn prepare_pairs(
    manifest: &DatasetManifest,
    cfg: &FramingConfig,
    stats: &NormStats,
) -> Result<(FrameBatch, FrameBatch)> {
    let clips = prepare_clips(manifest, cfg)?;
    let noisy = frame_signal(&clips.mixture, cfg, stats)?;
    let clean = frame_signal(&clips.clean, cfg, stats)?;
    Ok((noisy, clean))
}

/// Build, train, and package a model from train/validation manifests.
///
/// Normalization stats come from the concatenated clean training speech;
/// both manifests are framed with those stats. The returned checkpoint
/// carries the training manifest's SNR as its tag.
pub fn train_from_manifests(
    spec: &ModelSpec,
    framing: &FramingConfig,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    cfg: &crate::train::TrainConfig,
    seed: u64,
    log: Option<&mut dyn std::io::Write>,
) -> Result<(Checkpoint, crate::train::TrainReport)> {
    let train_clips = prepare_clips(train_manifest, framing)?;
    let stats = crate::dsp::compute_norm_stats(&train_clips.clean)?;
    let train_noisy = frame_signal(&train_clips.mixture, framing, &stats)?;
    let train_clean = frame_signal(&train_clips.clean, framing, &stats)?;
    let (val_noisy, val_clean) = prepare_pairs(val_manifest, framing, &stats)?;

    let model = crate::nn::build_model::<f32>(spec, seed)?;
    let (trained, report) = crate::train::train(
        model,
        (&train_noisy, &train_clean),
        (&val_noisy, &val_clean),
        cfg,
        log,
    )?;
    let checkpoint = Checkpoint::new(trained, stats, *framing, train_manifest.snr_db, seed)?;
    Ok((checkpoint, report))
}

/// Fine-tune a trained checkpoint on a new speaker's manifest. The pairs
/// are prepared with the checkpoint's original normalization stats, and
/// the optimizer starts from fresh state.
pub fn finetune_from_manifest(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    epochs: usize,
    cfg: &crate::train::TrainConfig,
) -> Result<Checkpoint> {
    let (noisy, clean) = prepare_pairs(manifest, &checkpoint.framing, &checkpoint.stats)?;
    let tuned = crate::train::finetune(checkpoint.model.clone(), (&noisy, &clean), epochs, cfg)?;
    Checkpoint::new(
        tuned,
        checkpoint.stats,
        checkpoint.framing,
        checkpoint.snr_tag_db,
        checkpoint.seed,
    )
}

/// Run the full denoise path: zero-pad to whole frames, window/normalize
/// with the checkpoint's stats, forward in inference mode batch by batch,
/// denormalize, overlap-add, and trim the padding plus the attenuated
/// hop-length edges. The output is `input length - 2 * hop` samples long
/// and lines up with `input[hop..]`.
pub fn denoise(checkpoint: &Checkpoint, noisy: &AudioClip) -> Result<AudioClip> {
    let cfg = &checkpoint.framing;
    if noisy.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::RateMismatch(format!(
            "clip at {} Hz, checkpoint expects {} Hz",
            noisy.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let len = noisy.len();
    if len <= cfg.frame_len {
        return Err(Error::TooShort(format!(
            "need more than one frame ({} samples) of input, got {len}",
            cfg.frame_len
        )));
    }

    // Pad so the last frame is whole: count * hop + frame_len covers it.
    let count = (len - cfg.frame_len).div_ceil(cfg.hop) + 1;
    let padded_len = (count - 1) * cfg.hop + cfg.frame_len;
    let mut padded = noisy.samples.clone();
    padded.resize(padded_len, 0.0);
    let padded = AudioClip::new(padded, cfg.sample_rate_hz)?;

    let frames = frame_signal(&padded, cfg, &checkpoint.stats)?;
    debug_assert_eq!(frames.count(), count);

    let mut processed = Array2::<f64>::zeros((count, cfg.frame_len));
    let mut start = 0usize;
    while start < count {
        let end = (start + DENOISE_BATCH_FRAMES).min(count);
        let mut input = Array3::<f32>::zeros((end - start, 1, cfg.frame_len));
        for (row, k) in (start..end).enumerate() {
            for n in 0..cfg.frame_len {
                input[[row, 0, n]] = frames.frames[[k, n]] as f32;
            }
        }
        let output = checkpoint.model.forward_infer(&input)?;
        for (row, k) in (start..end).enumerate() {
            for n in 0..cfg.frame_len {
                processed[[k, n]] = output[[row, 0, n]] as f64;
            }
        }
        start = end;
    }

    let batch = FrameBatch { frames: processed, config: *cfg, normalized: true };
    let reconstructed = overlap_add(&batch, &checkpoint.stats)?;
    // Drop the padding tail; keep input_len - 2*hop samples.
    let keep = len - 2 * cfg.hop;
    AudioClip::new(reconstructed.samples[..keep].to_vec(), cfg.sample_rate_hz)
}
