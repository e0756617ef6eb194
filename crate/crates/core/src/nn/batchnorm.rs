//! Batch normalization over `[batch, channels, time]` activations.
//! Statistics are per channel, reduced over both the batch and time axes.

use ndarray::{s, Array1, Array3};

use super::Scalar;
use crate::error::{Error, Result};

pub struct BnTrainOutput<T> {
    pub output: Array3<T>,
    /// `(x - mean) / sqrt(var + eps)`, kept for the backward pass.
    pub normalized: Array3<T>,
    pub inv_std: Array1<T>,
    pub batch_mean: Array1<T>,
    pub batch_var: Array1<T>,
}

fn check_params<T: Scalar>(input: &Array3<T>, gamma: &Array1<T>, beta: &Array1<T>) -> Result<usize> {
    let (_, c, _) = input.dim();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm params sized {}/{} for {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(c)
}

/// Training-mode forward: normalize with batch statistics (population
/// variance over batch x time), then apply gamma/beta.
pub fn batchnorm_train<T: Scalar>(
    input: &Array3<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    epsilon: T,
) -> Result<BnTrainOutput<T>> {
    let c = check_params(input, gamma, beta)?;
    let (b, _, t) = input.dim();
    if b < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch statistics need at least 2 items, got {b}"
        )));
    }
    let n = T::from(b * t).unwrap();

    let mut batch_mean = Array1::zeros(c);
    let mut batch_var = Array1::zeros(c);
    for ch in 0..c {
        let mut sum = T::zero();
        for bb in 0..b {
            let row = input.slice(s![bb, ch, ..]);
            sum += row.to_slice().expect("standard layout").iter().copied().sum::<T>();
        }
        let mean = sum / n;
        let mut sq = T::zero();
        for bb in 0..b {
            let row = input.slice(s![bb, ch, ..]);
            for &x in row.to_slice().expect("standard layout") {
                let d = x - mean;
                sq += d * d;
            }
        }
        batch_mean[ch] = mean;
        batch_var[ch] = sq / n;
    }

    let inv_std = batch_mean
        .iter()
        .zip(batch_var.iter())
        .map(|(_, &v)| T::one() / (v + epsilon).sqrt())
        .collect::<Array1<T>>();

    let mut normalized = Array3::zeros((b, c, t));
    let mut output = Array3::zeros((b, c, t));
    for bb in 0..b {
        for ch in 0..c {
            let mean = batch_mean[ch];
            let istd = inv_std[ch];
            let g = gamma[ch];
            let be = beta[ch];
            for nn in 0..t {
                let xn = (input[[bb, ch, nn]] - mean) * istd;
                normalized[[bb, ch, nn]] = xn;
                output[[bb, ch, nn]] = g * xn + be;
            }
        }
    }

    Ok(BnTrainOutput { output, normalized, inv_std, batch_mean, batch_var })
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Array3<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    running_mean: &Array1<T>,
    running_var: &Array1<T>,
    epsilon: T,
) -> Result<Array3<T>> {
    let c = check_params(input, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape("running statistics sized differently from channels".into()));
    }
    let (b, _, t) = input.dim();
    // Fold the whole affine map into one scale and shift per channel.
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + epsilon).sqrt())
        .collect();
    let shift: Vec<T> = (0..c).map(|ch| beta[ch] - running_mean[ch] * scale[ch]).collect();

    let mut output = Array3::zeros((b, c, t));
    for bb in 0..b {
        for ch in 0..c {
            let sc = scale[ch];
            let sh = shift[ch];
            for nn in 0..t {
                output[[bb, ch, nn]] = input[[bb, ch, nn]] * sc + sh;
            }
        }
    }
    Ok(output)
}

/// Gradients through the batch statistics. Running statistics receive none.
pub fn batchnorm_backward<T: Scalar>(
    normalized: &Array3<T>,
    inv_std: &Array1<T>,
    gamma: &Array1<T>,
    output_grad: &Array3<T>,
) -> Result<(Array1<T>, Array1<T>, Array3<T>)> {
    let (b, c, t) = normalized.dim();
    if output_grad.dim() != (b, c, t) || inv_std.len() != c || gamma.len() != c {
        return Err(Error::Shape("batchnorm backward shapes disagree".into()));
    }
    let n = T::from(b * t).unwrap();

    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let mut dg = T::zero();
        let mut db = T::zero();
        for bb in 0..b {
            for nn in 0..t {
                let g = output_grad[[bb, ch, nn]];
                dg += g * normalized[[bb, ch, nn]];
                db += g;
            }
        }
        dgamma[ch] = dg;
        dbeta[ch] = db;
    }

    // dx = gamma * inv_std / n * (n*g - sum(g) - xhat * sum(g*xhat))
    let mut dinput = Array3::zeros((b, c, t));
    for ch in 0..c {
        let k = gamma[ch] * inv_std[ch] / n;
        let dg = dgamma[ch];
        let db = dbeta[ch];
        for bb in 0..b {
            for nn in 0..t {
                let g = output_grad[[bb, ch, nn]];
                let xn = normalized[[bb, ch, nn]];
                dinput[[bb, ch, nn]] = k * (n * g - db - xn * dg);
            }
        }
    }
    Ok((dgamma, dbeta, dinput))
}
