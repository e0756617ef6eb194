//! Python bindings: the main types and operations of the speech
//! enhancement library, exposed as the `fcse` extension module.
//!
//! Build with `cargo build -p fcse-python --release`; the resulting
//! `libfcse.so` imports as `fcse` once renamed to `fcse.so` on the
//! Python path (see `python/smoke_test.py`).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use fcse_core::audio_io;
use fcse_core::dsp;
use fcse_core::metrics;
use fcse_core::nn;
use fcse_core::pipeline;
use fcse_core::synth;
use fcse_core::train::TrainConfig;

fn to_py(e: fcse_core::Error) -> PyErr {
    match e {
        fcse_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Per-epoch training log rows: `(epoch, train_mse, val_mse, is_best)`.
type EpochRows = Vec<(usize, f64, f64, bool)>;

/// Mono sample buffer plus its sample rate.
#[pyclass(name = "AudioClip", from_py_object)]
#[derive(Clone)]
struct PyAudioClip {
    inner: audio_io::AudioClip,
}

#[pymethods]
impl PyAudioClip {
    #[new]
    fn new(samples: Vec<f64>, sample_rate_hz: u32) -> PyResult<Self> {
        Ok(Self { inner: audio_io::AudioClip::new(samples, sample_rate_hz).map_err(to_py)? })
    }

    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.inner.samples.clone()
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.inner.sample_rate_hz
    }

    fn duration_seconds(&self) -> f64 {
        self.inner.duration_seconds()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "AudioClip({} samples at {} Hz)",
            self.inner.len(),
            self.inner.sample_rate_hz
        )
    }
}

/// Scalar normalization statistics of the clean training speech.
#[pyclass(name = "NormStats", from_py_object)]
#[derive(Clone)]
struct PyNormStats {
    inner: dsp::NormStats,
}

#[pymethods]
impl PyNormStats {
    #[new]
    fn new(mean: f64, std: f64) -> PyResult<Self> {
        Ok(Self { inner: dsp::NormStats::new(mean, std).map_err(to_py)? })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn std(&self) -> f64 {
        self.inner.std
    }

    fn __repr__(&self) -> String {
        format!("NormStats(mean={}, std={})", self.inner.mean, self.inner.std)
    }
}

/// Frame geometry: frame length, hop (half the frame), sample rate.
#[pyclass(name = "FramingConfig", from_py_object)]
#[derive(Clone)]
struct PyFramingConfig {
    inner: dsp::FramingConfig,
}

#[pymethods]
impl PyFramingConfig {
    #[new]
    #[pyo3(signature = (frame_len=320, hop=160, sample_rate_hz=16000))]
    fn new(frame_len: usize, hop: usize, sample_rate_hz: u32) -> PyResult<Self> {
        Ok(Self { inner: dsp::FramingConfig::new(frame_len, hop, sample_rate_hz).map_err(to_py)? })
    }

    #[getter]
    fn frame_len(&self) -> usize {
        self.inner.frame_len
    }

    #[getter]
    fn hop(&self) -> usize {
        self.inner.hop
    }

    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.inner.sample_rate_hz
    }

    fn frame_count(&self, len: usize) -> Option<usize> {
        self.inner.frame_count(len)
    }
}

/// Declarative network description.
#[pyclass(name = "ModelSpec", from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: nn::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// Parse the plain-text architecture format (`conv <filters> <kernel_ms>`
    /// lines followed by `output <kernel_ms>`).
    #[staticmethod]
    #[pyo3(signature = (text, frame_len=320, sample_rate_hz=16000))]
    fn from_arch_text(text: &str, frame_len: usize, sample_rate_hz: u32) -> PyResult<Self> {
        Ok(Self {
            inner: nn::ModelSpec::from_arch_text(text, frame_len, sample_rate_hz).map_err(to_py)?,
        })
    }

    #[getter]
    fn frame_len(&self) -> usize {
        self.inner.frame_len
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn layer_param_counts(&self) -> Vec<usize> {
        self.inner.layer_param_counts()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec({} layers, {} parameters)",
            self.inner.layers.len(),
            self.inner.param_count()
        )
    }
}

/// An instantiated network.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: nn::Model<f32>,
}

#[pymethods]
impl PyModel {
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        format!("Model({} parameters)", self.inner.param_count())
    }
}

/// Model parameters plus normalization stats and framing: everything
/// standalone inference needs.
#[pyclass(name = "Checkpoint", from_py_object)]
#[derive(Clone)]
struct PyCheckpoint {
    inner: pipeline::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[new]
    fn new(
        model: PyModel,
        stats: PyNormStats,
        framing: PyFramingConfig,
        snr_tag_db: f64,
        seed: u64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::Checkpoint::new(
                model.inner,
                stats.inner,
                framing.inner,
                snr_tag_db,
                seed,
            )
            .map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: pipeline::Checkpoint::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// Denoise a clip; the output is one hop shorter on each side.
    fn denoise(&self, noisy: &PyAudioClip) -> PyResult<PyAudioClip> {
        Ok(PyAudioClip { inner: pipeline::denoise(&self.inner, &noisy.inner).map_err(to_py)? })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn snr_tag_db(&self) -> f64 {
        self.inner.snr_tag_db
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn stats(&self) -> PyNormStats {
        PyNormStats { inner: self.inner.stats }
    }

    #[getter]
    fn framing(&self) -> PyFramingConfig {
        PyFramingConfig { inner: self.inner.framing }
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint({} parameters, trained at {} dB)",
            self.inner.param_count(),
            self.inner.snr_tag_db
        )
    }
}

#[pyfunction]
fn read_wav(path: &str) -> PyResult<PyAudioClip> {
    Ok(PyAudioClip { inner: audio_io::read_wav(path).map_err(to_py)? })
}

#[pyfunction]
fn write_wav(clip: &PyAudioClip, path: &str) -> PyResult<()> {
    audio_io::write_wav(&clip.inner, path).map_err(to_py)
}

#[pyfunction]
fn to_mono(channels: Vec<Vec<f64>>, sample_rate_hz: u32) -> PyResult<PyAudioClip> {
    Ok(PyAudioClip { inner: audio_io::to_mono(&channels, sample_rate_hz).map_err(to_py)? })
}

#[pyfunction]
fn decimate(clip: &PyAudioClip, factor: u32) -> PyResult<PyAudioClip> {
    Ok(PyAudioClip { inner: audio_io::decimate(&clip.inner, factor).map_err(to_py)? })
}

#[pyfunction]
fn hann_window(frame_len: usize) -> Vec<f64> {
    dsp::hann_window(frame_len)
}

#[pyfunction]
#[pyo3(signature = (clean, noise, snr_db, seed=None))]
fn mix_at_snr(
    clean: &PyAudioClip,
    noise: &PyAudioClip,
    snr_db: f64,
    seed: Option<u64>,
) -> PyResult<(PyAudioClip, f64)> {
    let (mixture, scale) = match seed {
        Some(seed) => dsp::mix_at_snr_seeded(&clean.inner, &noise.inner, snr_db, seed),
        None => dsp::mix_at_snr(&clean.inner, &noise.inner, snr_db),
    }
    .map_err(to_py)?;
    Ok((PyAudioClip { inner: mixture }, scale))
}

#[pyfunction]
fn compute_norm_stats(clip: &PyAudioClip) -> PyResult<PyNormStats> {
    Ok(PyNormStats { inner: dsp::compute_norm_stats(&clip.inner).map_err(to_py)? })
}

#[pyfunction]
fn snr_db(reference: &PyAudioClip, estimate: &PyAudioClip) -> PyResult<f64> {
    metrics::snr_db(&reference.inner, &estimate.inner).map_err(to_py)
}

#[pyfunction]
fn si_sdr_db(reference: &PyAudioClip, estimate: &PyAudioClip) -> PyResult<f64> {
    metrics::si_sdr_db(&reference.inner, &estimate.inner).map_err(to_py)
}

#[pyfunction]
fn segmental_snr_db(
    reference: &PyAudioClip,
    estimate: &PyAudioClip,
    cfg: &PyFramingConfig,
) -> PyResult<f64> {
    metrics::segmental_snr_db(&reference.inner, &estimate.inner, &cfg.inner).map_err(to_py)
}

#[pyfunction]
fn build_model(spec: &PyModelSpec, seed: u64) -> PyResult<PyModel> {
    Ok(PyModel { inner: nn::build_model(&spec.inner, seed).map_err(to_py)? })
}

/// Architecture text of the selected production model
/// (12/25/50/100/200 filters, 2,266,736 parameters).
#[pyfunction]
fn reference_arch_text() -> &'static str {
    nn::reference_arch_text()
}

#[pyfunction]
#[pyo3(signature = (duration_s, sample_rate_hz, fundamental_hz, n_harmonics, seed))]
fn am_harmonics(
    duration_s: f64,
    sample_rate_hz: u32,
    fundamental_hz: f64,
    n_harmonics: usize,
    seed: u64,
) -> PyAudioClip {
    PyAudioClip { inner: synth::am_harmonics(duration_s, sample_rate_hz, fundamental_hz, n_harmonics, seed) }
}

#[pyfunction]
fn filtered_noise(duration_s: f64, sample_rate_hz: u32, cutoff_hz: f64, seed: u64) -> PyAudioClip {
    PyAudioClip { inner: synth::filtered_noise(duration_s, sample_rate_hz, cutoff_hz, seed) }
}

/// Train a model from manifest files. Returns the checkpoint and the
/// per-epoch log as `(epoch, train_mse, val_mse, is_best)` tuples.
#[pyfunction]
#[pyo3(signature = (arch_text, train_manifest, val_manifest, lr=1e-3, batch=64, max_epochs=100, patience=20, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_from_manifests(
    arch_text: &str,
    train_manifest: &str,
    val_manifest: &str,
    lr: f64,
    batch: usize,
    max_epochs: usize,
    patience: usize,
    seed: u64,
) -> PyResult<(PyCheckpoint, EpochRows)> {
    let framing = dsp::FramingConfig::default();
    let spec = nn::ModelSpec::from_arch_text(arch_text, framing.frame_len, framing.sample_rate_hz)
        .map_err(to_py)?;
    let train_manifest = pipeline::DatasetManifest::load(train_manifest).map_err(to_py)?;
    let val_manifest = pipeline::DatasetManifest::load(val_manifest).map_err(to_py)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        max_epochs,
        patience,
        shuffle_seed: seed,
        ..TrainConfig::default()
    };
    let (checkpoint, report) = pipeline::train_from_manifests(
        &spec,
        &framing,
        &train_manifest,
        &val_manifest,
        &cfg,
        seed,
        None,
    )
    .map_err(to_py)?;
    let rows = report
        .epochs
        .iter()
        .map(|r| (r.epoch, r.train_mse, r.val_mse, r.is_best))
        .collect();
    Ok((PyCheckpoint { inner: checkpoint }, rows))
}

/// Fine-tune a trained checkpoint on a new speaker's manifest.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, epochs=5, lr=1e-3, batch=64, seed=0))]
fn finetune_from_manifest(
    checkpoint: &PyCheckpoint,
    manifest: &str,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> PyResult<PyCheckpoint> {
    let manifest = pipeline::DatasetManifest::load(manifest).map_err(to_py)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        shuffle_seed: seed,
        ..TrainConfig::default()
    };
    Ok(PyCheckpoint {
        inner: pipeline::finetune_from_manifest(&checkpoint.inner, &manifest, epochs, &cfg)
            .map_err(to_py)?,
    })
}

#[pymodule]
fn fcse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAudioClip>()?;
    m.add_class::<PyNormStats>()?;
    m.add_class::<PyFramingConfig>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(to_mono, m)?)?;
    m.add_function(wrap_pyfunction!(decimate, m)?)?;
    m.add_function(wrap_pyfunction!(hann_window, m)?)?;
    m.add_function(wrap_pyfunction!(mix_at_snr, m)?)?;
    m.add_function(wrap_pyfunction!(compute_norm_stats, m)?)?;
    m.add_function(wrap_pyfunction!(snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdr_db, m)?)?;
    m.add_function(wrap_pyfunction!(segmental_snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(build_model, m)?)?;
    m.add_function(wrap_pyfunction!(reference_arch_text, m)?)?;
    m.add_function(wrap_pyfunction!(am_harmonics, m)?)?;
    m.add_function(wrap_pyfunction!(filtered_noise, m)?)?;
    m.add_function(wrap_pyfunction!(train_from_manifests, m)?)?;
    m.add_function(wrap_pyfunction!(finetune_from_manifest, m)?)?;
    Ok(())
}
