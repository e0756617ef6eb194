//! 1-D "same"-padded convolution (cross-correlation, stride 1, no dilation)
//! with direct and FFT evaluation paths plus the reverse-mode kernels.
//!
//! Activations are laid out `[batch, channels, time]`. For a kernel of
//! length `k` the left pad is `(k-1)/2` and the right pad is `k/2`, so the
//! output length always equals the input length.

use ndarray::{Array1, Array3, Axis, Zip};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Scalar;
use crate::error::{Error, Result};

pub(crate) fn pad_left(kernel_len: usize) -> usize {
    (kernel_len - 1) / 2
}

/// `dst[i] += w * src[i + shift]` over the index range where both sides
/// are in bounds.
#[inline]
fn shifted_axpy<T: Scalar>(dst: &mut [T], src: &[T], w: T, shift: isize) {
    let t = dst.len();
    debug_assert_eq!(src.len(), t);
    let (d0, s0, len) = if shift >= 0 {
        let s = shift as usize;
        if s >= t {
            return;
        }
        (0, s, t - s)
    } else {
        let s = (-shift) as usize;
        if s >= t {
            return;
        }
        (s, 0, t - s)
    };
    for (d, &x) in dst[d0..d0 + len].iter_mut().zip(&src[s0..s0 + len]) {
        *d += w * x;
    }
}

/// `sum_i a[i] * b[i + shift]` over the in-bounds range.
#[inline]
fn shifted_dot<T: Scalar>(a: &[T], b: &[T], shift: isize) -> T {
    let t = a.len();
    debug_assert_eq!(b.len(), t);
    let (a0, b0, len) = if shift >= 0 {
        let s = shift as usize;
        if s >= t {
            return T::zero();
        }
        (0, s, t - s)
    } else {
        let s = (-shift) as usize;
        if s >= t {
            return T::zero();
        }
        (s, 0, t - s)
    };
    let mut acc = T::zero();
    for (&x, &y) in a[a0..a0 + len].iter().zip(&b[b0..b0 + len]) {
        acc += x * y;
    }
    acc
}

fn check_shapes<T: Scalar>(
    input: &Array3<T>,
    weight: &Array3<T>,
    bias: &Array1<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, ic, t) = input.dim();
    let (oc, w_ic, k) = weight.dim();
    if w_ic != ic {
        return Err(Error::Shape(format!(
            "conv weight expects {w_ic} input channels, input has {ic}"
        )));
    }
    if bias.len() != oc {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {oc} output channels",
            bias.len()
        )));
    }
    if b == 0 || t == 0 || k == 0 || oc == 0 {
        return Err(Error::Shape("conv dimensions must be positive".into()));
    }
    Ok((b, ic, t, oc, k))
}

/// Direct zero-padded cross-correlation. Output shape equals
/// `[batch, out_channels, time]` with time preserved.
pub fn conv1d_same<T: Scalar>(
    input: &Array3<T>,
    weight: &Array3<T>,
    bias: &Array1<T>,
) -> Result<Array3<T>> {
    let (b, ic, t, oc, k) = check_shapes(input, weight, bias)?;
    let pl = pad_left(k) as isize;

    let mut out = Array3::zeros((b, oc, t));
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(input.axis_iter(Axis(0)))
        .par_for_each(|mut ob, ib| {
            for o in 0..oc {
                let mut orow = ob.row_mut(o);
                let orow = orow.as_slice_mut().expect("standard layout");
                orow.fill(bias[o]);
                for c in 0..ic {
                    let xrow = ib.row(c);
                    let x = xrow.to_slice().expect("standard layout");
                    for kk in 0..k {
                        shifted_axpy(orow, x, weight[[o, c, kk]], kk as isize - pl);
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv1d_same`] with respect to weights, bias, and input.
pub fn conv1d_backward<T: Scalar>(
    input: &Array3<T>,
    weight: &Array3<T>,
    output_grad: &Array3<T>,
) -> Result<(Array3<T>, Array1<T>, Array3<T>)> {
    let (b, ic, t) = input.dim();
    let (oc, w_ic, k) = weight.dim();
    if w_ic != ic || output_grad.dim() != (b, oc, t) {
        return Err(Error::Shape(format!(
            "conv backward shapes disagree: input {:?}, weight {:?}, grad {:?}",
            input.dim(),
            weight.dim(),
            output_grad.dim()
        )));
    }
    let pl = pad_left(k) as isize;

    // Weight and bias gradients, parallel over output channels so the
    // batch reduction keeps a fixed order.
    let mut dw = Array3::zeros((oc, ic, k));
    let mut db = Array1::zeros(oc);
    Zip::indexed(dw.axis_iter_mut(Axis(0)))
        .and(db.view_mut())
        .par_for_each(|o, mut dwo, dbo: &mut T| {
            for bb in 0..b {
                let grow = output_grad.slice(ndarray::s![bb, o, ..]);
                let g = grow.to_slice().expect("standard layout");
                *dbo += g.iter().copied().sum::<T>();
                for c in 0..ic {
                    let xrow = input.slice(ndarray::s![bb, c, ..]);
                    let x = xrow.to_slice().expect("standard layout");
                    for kk in 0..k {
                        dwo[[c, kk]] += shifted_dot(g, x, kk as isize - pl);
                    }
                }
            }
        });

    // Input gradient, parallel over batch items (disjoint rows).
    let mut din = Array3::zeros((b, ic, t));
    Zip::from(din.axis_iter_mut(Axis(0)))
        .and(output_grad.axis_iter(Axis(0)))
        .par_for_each(|mut dib, gb| {
            for c in 0..ic {
                let mut drow = dib.row_mut(c);
                let d = drow.as_slice_mut().expect("standard layout");
                for o in 0..oc {
                    let grow = gb.row(o);
                    let g = grow.to_slice().expect("standard layout");
                    for kk in 0..k {
                        shifted_axpy(d, g, weight[[o, c, kk]], pl - kk as isize);
                    }
                }
            }
        });

    Ok((dw, db, din))
}

/// Same operation as [`conv1d_same`], evaluated as a frequency-domain
/// pointwise product. Buffers are zero-padded past `time + kernel - 1`
/// so no circular wrap-around can occur.
pub fn conv1d_fft<T: Scalar>(
    input: &Array3<T>,
    weight: &Array3<T>,
    bias: &Array1<T>,
) -> Result<Array3<T>> {
    let (b, ic, t, oc, k) = check_shapes(input, weight, bias)?;
    let pr = k / 2;
    let fft_len = (t + k - 1).next_power_of_two();

    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    // Cross-correlation is linear convolution with the kernel reversed;
    // the "same" slice then starts at the right pad.
    let mut kernel_spectra = vec![vec![Complex::new(T::zero(), T::zero()); fft_len]; oc * ic];
    for o in 0..oc {
        for c in 0..ic {
            let buf = &mut kernel_spectra[o * ic + c];
            for kk in 0..k {
                buf[kk] = Complex::new(weight[[o, c, k - 1 - kk]], T::zero());
            }
            fwd.process(buf);
        }
    }

    let mut input_spectra = vec![vec![Complex::new(T::zero(), T::zero()); fft_len]; ic];
    let scale = T::one() / T::from(fft_len).unwrap();
    let mut out = Array3::zeros((b, oc, t));
    let mut acc = vec![Complex::new(T::zero(), T::zero()); fft_len];
    for bb in 0..b {
        for (c, spectrum) in input_spectra.iter_mut().enumerate() {
            spectrum.fill(Complex::new(T::zero(), T::zero()));
            for (n, slot) in spectrum.iter_mut().take(t).enumerate() {
                *slot = Complex::new(input[[bb, c, n]], T::zero());
            }
            fwd.process(spectrum);
        }
        for o in 0..oc {
            acc.fill(Complex::new(T::zero(), T::zero()));
            for (c, spectrum) in input_spectra.iter().enumerate() {
                let ks = &kernel_spectra[o * ic + c];
                for (a, (x, w)) in acc.iter_mut().zip(spectrum.iter().zip(ks)) {
                    *a += *x * *w;
                }
            }
            inv.process(&mut acc);
            for n in 0..t {
                out[[bb, o, n]] = acc[n + pr].re * scale + bias[o];
            }
        }
    }
    Ok(out)
}
