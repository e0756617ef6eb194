//! The fully convolutional denoiser: declarative layer specs, parameter
//! storage, forward passes in train/infer mode, and reverse-mode gradients.
//!
//! Activations are `[batch, channels, time]`. Training and inference run in
//! f32; everything is generic over [`Scalar`] so gradient checking can run
//! the same code in f64.

mod batchnorm;
mod conv;
mod prelu;

pub use batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BnTrainOutput};
pub use conv::{conv1d_backward, conv1d_fft, conv1d_same};
pub use prelu::{prelu_backward, prelu_forward};

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Numeric element type of the network.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + ndarray::ScalarOperand
    + rustfft::FftNum
    + std::iter::Sum<Self>
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Variance floor applied inside every batch normalization.
pub const BATCHNORM_EPSILON: f64 = 1e-3;
/// Weight of the current batch statistic in the running-statistic update.
pub const BATCHNORM_MOMENTUM: f64 = 0.01;
/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d { in_channels: usize, out_channels: usize, kernel_len: usize },
    BatchNorm { channels: usize },
    PRelu { channels: usize },
}

/// Declarative description of a network: frame length plus ordered layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub frame_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(frame_len: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { frame_len, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Parse the plain-text architecture format: one layer per line,
    /// `conv <out_channels> <kernel_ms>` for a hidden block (convolution
    /// followed by batch normalization and PReLU) and a final
    /// `output <kernel_ms>` line for the single-filter linear output layer.
    /// `#` starts a comment. Kernel lengths come out of
    /// `round(kernel_ms * sample_rate / 1000)`.
    pub fn from_arch_text(text: &str, frame_len: usize, sample_rate_hz: u32) -> Result<Self> {
        let mut layers = Vec::new();
        let mut channels = 1usize;
        let mut finished = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if finished {
                return Err(Error::Spec(format!(
                    "line {}: layers after the output layer",
                    lineno + 1
                )));
            }
            let mut tok = line.split_whitespace();
            let kind = tok.next().unwrap();
            match kind {
                "conv" => {
                    let out: usize = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Spec(format!("line {}: conv needs <out_channels>", lineno + 1)))?;
                    let kernel_ms: f64 = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Spec(format!("line {}: conv needs <kernel_ms>", lineno + 1)))?;
                    let k = kernel_len_from_ms(kernel_ms, sample_rate_hz)?;
                    layers.push(LayerSpec::Conv1d {
                        in_channels: channels,
                        out_channels: out,
                        kernel_len: k,
                    });
                    layers.push(LayerSpec::BatchNorm { channels: out });
                    layers.push(LayerSpec::PRelu { channels: out });
                    channels = out;
                }
                "output" => {
                    let kernel_ms: f64 = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Spec(format!("line {}: output needs <kernel_ms>", lineno + 1)))?;
                    let k = kernel_len_from_ms(kernel_ms, sample_rate_hz)?;
                    layers.push(LayerSpec::Conv1d {
                        in_channels: channels,
                        out_channels: 1,
                        kernel_len: k,
                    });
                    finished = true;
                }
                other => {
                    return Err(Error::Spec(format!("line {}: unknown layer kind '{other}'", lineno + 1)));
                }
            }
            if tok.next().is_some() {
                return Err(Error::Spec(format!("line {}: trailing tokens", lineno + 1)));
            }
        }
        if !finished {
            return Err(Error::Spec("architecture has no output layer".into()));
        }
        Self::new(frame_len, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 {
            return Err(Error::Spec("frame_len must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Spec("spec has no layers".into()));
        }
        let mut channels = match self.layers[0] {
            LayerSpec::Conv1d { in_channels, .. } => {
                if in_channels == 0 {
                    return Err(Error::Spec("input channel count must be positive".into()));
                }
                in_channels
            }
            _ => return Err(Error::Spec("first layer must be a convolution".into())),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_len } => {
                    if in_channels != channels {
                        return Err(Error::Spec(format!(
                            "layer {i}: conv expects {in_channels} input channels, chain carries {channels}"
                        )));
                    }
                    if out_channels == 0 || kernel_len == 0 {
                        return Err(Error::Spec(format!("layer {i}: dimensions must be positive")));
                    }
                    channels = out_channels;
                }
                LayerSpec::BatchNorm { channels: c } | LayerSpec::PRelu { channels: c } => {
                    if c != channels {
                        return Err(Error::Spec(format!(
                            "layer {i}: expects {c} channels, chain carries {channels}"
                        )));
                    }
                }
            }
        }
        match *self.layers.last().unwrap() {
            LayerSpec::Conv1d { out_channels: 1, .. } => Ok(()),
            _ => Err(Error::Spec(
                "final layer must be a convolution with one filter and no activation".into(),
            )),
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.layers[0] {
            LayerSpec::Conv1d { in_channels, .. } => in_channels,
            _ => unreachable!("validated specs start with a convolution"),
        }
    }

    /// Parameter count per layer, counting batchnorm running statistics.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_len } => {
                    out_channels * in_channels * kernel_len + out_channels
                }
                LayerSpec::BatchNorm { channels } => 4 * channels,
                LayerSpec::PRelu { channels } => channels * self.frame_len,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }
}

fn kernel_len_from_ms(kernel_ms: f64, sample_rate_hz: u32) -> Result<usize> {
    if !kernel_ms.is_finite() || kernel_ms <= 0.0 {
        return Err(Error::Spec(format!("kernel length {kernel_ms} ms is not positive")));
    }
    let k = (kernel_ms * sample_rate_hz as f64 / 1000.0).round() as usize;
    if k == 0 {
        return Err(Error::Spec(format!(
            "kernel of {kernel_ms} ms rounds to zero samples at {sample_rate_hz} Hz"
        )));
    }
    Ok(k)
}

/// Per-layer parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Conv {
        /// `[out_channels, in_channels, kernel_len]`
        weight: Array3<T>,
        bias: Array1<T>,
    },
    BatchNorm {
        gamma: Array1<T>,
        beta: Array1<T>,
        running_mean: Array1<T>,
        running_var: Array1<T>,
    },
    PRelu {
        /// `[channels, frame_len]`
        alpha: Array2<T>,
    },
}

/// An instantiated network: spec plus parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    pub layers: Vec<LayerParams<T>>,
    pub bn_epsilon: T,
    pub bn_momentum: T,
}

/// Build a model with deterministic initialization: conv weights uniform in
/// `+-sqrt(6 / (fan_in * (1 + slope^2)))` with zero bias, identity batchnorm
/// (gamma 1, beta 0, running mean 0, running var 1), PReLU slopes 0.25.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        layers.push(match *layer {
            LayerSpec::Conv1d { in_channels, out_channels, kernel_len } => {
                let fan_in = (in_channels * kernel_len) as f64;
                let bound = (6.0 / (fan_in * (1.0 + PRELU_INIT * PRELU_INIT))).sqrt();
                let mut weight = Array3::zeros((out_channels, in_channels, kernel_len));
                for w in weight.iter_mut() {
                    *w = T::from(rng.random_range(-bound..bound)).unwrap();
                }
                LayerParams::Conv { weight, bias: Array1::zeros(out_channels) }
            }
            LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm {
                gamma: Array1::ones(channels),
                beta: Array1::zeros(channels),
                running_mean: Array1::zeros(channels),
                running_var: Array1::ones(channels),
            },
            LayerSpec::PRelu { channels } => LayerParams::PRelu {
                alpha: Array2::from_elem((channels, spec.frame_len), T::from(PRELU_INIT).unwrap()),
            },
        });
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
        bn_epsilon: T::from(BATCHNORM_EPSILON).unwrap(),
        bn_momentum: T::from(BATCHNORM_MOMENTUM).unwrap(),
    })
}

/// Record of one train-mode forward pass, holding what the backward pass
/// needs. Consumed by value, so it can be replayed at most once.
pub struct Tape<T> {
    spec: ModelSpec,
    batch: usize,
    records: Vec<TapeRecord<T>>,
}

enum TapeRecord<T> {
    Conv { input: Array3<T> },
    BatchNorm { normalized: Array3<T>, inv_std: Array1<T> },
    PRelu { input: Array3<T> },
}

/// Gradient buffers for every trainable parameter plus the network input.
/// Batchnorm running statistics are not trainable and get no entry.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
    pub input: Array3<T>,
}

#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Conv { weight: Array3<T>, bias: Array1<T> },
    BatchNorm { gamma: Array1<T>, beta: Array1<T> },
    PRelu { alpha: Array2<T> },
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Reassemble a model from deserialized parts, validating that every
    /// buffer matches the spec's declared shape.
    pub fn from_parts(
        spec: ModelSpec,
        layers: Vec<LayerParams<T>>,
        bn_epsilon: T,
        bn_momentum: T,
    ) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::Spec(format!(
                "{} parameter layers for {} spec layers",
                layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (ls, lp)) in spec.layers.iter().zip(&layers).enumerate() {
            let ok = match (*ls, lp) {
                (
                    LayerSpec::Conv1d { in_channels, out_channels, kernel_len },
                    LayerParams::Conv { weight, bias },
                ) => {
                    weight.dim() == (out_channels, in_channels, kernel_len)
                        && bias.len() == out_channels
                }
                (
                    LayerSpec::BatchNorm { channels },
                    LayerParams::BatchNorm { gamma, beta, running_mean, running_var },
                ) => {
                    gamma.len() == channels
                        && beta.len() == channels
                        && running_mean.len() == channels
                        && running_var.len() == channels
                }
                (LayerSpec::PRelu { channels }, LayerParams::PRelu { alpha }) => {
                    alpha.dim() == (channels, spec.frame_len)
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Spec(format!("layer {i}: parameters do not match the spec")));
            }
        }
        Ok(Self { spec, layers, bn_epsilon, bn_momentum })
    }

    /// Total stored parameters, counting batchnorm running statistics.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { weight, bias } => weight.len() + bias.len(),
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    gamma.len() + beta.len() + running_mean.len() + running_var.len()
                }
                LayerParams::PRelu { alpha } => alpha.len(),
            })
            .sum()
    }

    fn check_input(&self, input: &Array3<T>) -> Result<()> {
        let (b, c, t) = input.dim();
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != self.spec.input_channels() || t != self.spec.frame_len {
            return Err(Error::Shape(format!(
                "input {:?} does not match network ({} channels x {} samples)",
                input.dim(),
                self.spec.input_channels(),
                self.spec.frame_len
            )));
        }
        Ok(())
    }

    /// Inference forward pass: batchnorm uses running statistics, nothing
    /// is recorded or mutated. Safe to call concurrently on a shared model.
    pub fn forward_infer(&self, input: &Array3<T>) -> Result<Array3<T>> {
        self.check_input(input)?;
        let mut cur = input.clone();
        for params in &self.layers {
            cur = match params {
                LayerParams::Conv { weight, bias } => conv1d_same(&cur, weight, bias)?,
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    batchnorm_infer(&cur, gamma, beta, running_mean, running_var, self.bn_epsilon)?
                }
                LayerParams::PRelu { alpha } => prelu_forward(&cur, alpha)?,
            };
        }
        Ok(cur)
    }

    /// Training forward pass: batchnorm uses batch statistics and updates
    /// the running statistics in place; activations are recorded on a tape
    /// for [`Model::backward`].
    pub fn forward_train(&mut self, input: &Array3<T>) -> Result<(Array3<T>, Tape<T>)> {
        self.check_input(input)?;
        let momentum = self.bn_momentum;
        let epsilon = self.bn_epsilon;
        let mut records = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for params in &mut self.layers {
            cur = match params {
                LayerParams::Conv { weight, bias } => {
                    let out = conv1d_same(&cur, weight, bias)?;
                    records.push(TapeRecord::Conv { input: cur });
                    out
                }
                LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => {
                    let bn = batchnorm_train(&cur, gamma, beta, epsilon)?;
                    let one_minus = T::one() - momentum;
                    for (r, &b) in running_mean.iter_mut().zip(bn.batch_mean.iter()) {
                        *r = one_minus * *r + momentum * b;
                    }
                    for (r, &b) in running_var.iter_mut().zip(bn.batch_var.iter()) {
                        *r = one_minus * *r + momentum * b;
                    }
                    records.push(TapeRecord::BatchNorm {
                        normalized: bn.normalized,
                        inv_std: bn.inv_std,
                    });
                    bn.output
                }
                LayerParams::PRelu { alpha } => {
                    let out = prelu_forward(&cur, alpha)?;
                    records.push(TapeRecord::PRelu { input: cur });
                    out
                }
            };
        }
        let tape = Tape { spec: self.spec.clone(), batch: input.dim().0, records };
        Ok((cur, tape))
    }

    /// Reverse-mode pass over a recorded tape. Returns gradients for every
    /// trainable parameter and for the network input.
    pub fn backward(&self, tape: Tape<T>, output_grad: &Array3<T>) -> Result<Gradients<T>> {
        if tape.spec != self.spec {
            return Err(Error::Tape("tape was recorded by a different model".into()));
        }
        let expected = (tape.batch, 1usize, self.spec.frame_len);
        if output_grad.dim() != expected {
            return Err(Error::Shape(format!(
                "output gradient {:?}, expected {:?}",
                output_grad.dim(),
                expected
            )));
        }

        let mut grads_rev = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for (params, record) in self.layers.iter().zip(tape.records).rev() {
            match (params, record) {
                (LayerParams::Conv { weight, .. }, TapeRecord::Conv { input }) => {
                    let (dw, db, din) = conv1d_backward(&input, weight, &g)?;
                    grads_rev.push(LayerGrads::Conv { weight: dw, bias: db });
                    g = din;
                }
                (
                    LayerParams::BatchNorm { gamma, .. },
                    TapeRecord::BatchNorm { normalized, inv_std },
                ) => {
                    let (dgamma, dbeta, din) = batchnorm_backward(&normalized, &inv_std, gamma, &g)?;
                    grads_rev.push(LayerGrads::BatchNorm { gamma: dgamma, beta: dbeta });
                    g = din;
                }
                (LayerParams::PRelu { alpha }, TapeRecord::PRelu { input }) => {
                    let (dalpha, din) = prelu_backward(&input, alpha, &g)?;
                    grads_rev.push(LayerGrads::PRelu { alpha: dalpha });
                    g = din;
                }
                _ => return Err(Error::Tape("tape records do not line up with the layers".into())),
            }
        }
        grads_rev.reverse();
        Ok(Gradients { layers: grads_rev, input: g })
    }

    /// Mutable views of every trainable buffer, in declared layer order:
    /// conv weight then bias, batchnorm gamma then beta, PReLU alpha.
    /// Running statistics are excluded.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Conv { weight, bias } => {
                    out.push(weight.as_slice_mut().expect("standard layout"));
                    out.push(bias.as_slice_mut().expect("standard layout"));
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_slice_mut().expect("standard layout"));
                    out.push(beta.as_slice_mut().expect("standard layout"));
                }
                LayerParams::PRelu { alpha } => {
                    out.push(alpha.as_slice_mut().expect("standard layout"));
                }
            }
        }
        out
    }

    /// Lengths of the trainable buffers, matching
    /// [`Model::trainable_params_mut`] order.
    pub fn trainable_shapes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Conv { weight, bias } => {
                    out.push(weight.len());
                    out.push(bias.len());
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.len());
                    out.push(beta.len());
                }
                LayerParams::PRelu { alpha } => out.push(alpha.len()),
            }
        }
        out
    }
}

impl<T: Scalar> Gradients<T> {
    /// Read-only views matching [`Model::trainable_params_mut`] order.
    pub fn trainable_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerGrads::Conv { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice().expect("standard layout"));
                    out.push(beta.as_slice().expect("standard layout"));
                }
                LayerGrads::PRelu { alpha } => {
                    out.push(alpha.as_slice().expect("standard layout"));
                }
            }
        }
        out
    }
}

/// The selected production architecture: five hidden blocks of
/// 12/25/50/100/200 filters with 5 ms kernels, plus the single-filter
/// linear output layer, on 20 ms frames at 16 kHz.
pub fn reference_arch_text() -> &'static str {
    "conv 12 5\nconv 25 5\nconv 50 5\nconv 100 5\nconv 200 5\noutput 5\n"
}
