//! End-to-end speech enhancement on raw waveforms with a fully
//! convolutional network.
//!
//! A noisy clip goes through framing (20 ms windows, 50 % overlap,
//! periodic Hann), scalar normalization against the clean training
//! speech, a stack of same-padded 1-D convolutions with batch
//! normalization and PReLU activations, denormalization, and
//! overlap-add reconstruction. Training is Adam on MSE with
//! early stopping; short fine-tuning adapts a trained model to a
//! new speaker.
//!
//! Modules follow the processing path: [`audio_io`] for WAV and
//! resampling, [`dsp`] for mixing/framing/reconstruction, [`nn`] for the
//! network and its gradients, [`train`] for optimization, [`pipeline`]
//! for checkpoints and the denoise path, [`metrics`] for SNR-family
//! evaluation, and [`synth`] for deterministic test signals.

pub mod audio_io;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use audio_io::AudioClip;
pub use dsp::{FrameBatch, FramingConfig, NormStats};
pub use error::{Error, Result};
pub use nn::{build_model, Model, ModelSpec};
pub use pipeline::{denoise, Checkpoint, DatasetManifest};
