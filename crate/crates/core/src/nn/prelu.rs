//! PReLU with one learned slope per time-channel position, shared across
//! the batch dimension only.

use ndarray::{Array2, Array3};

use super::Scalar;
use crate::error::{Error, Result};

/// `out = x` for `x >= 0`, `alpha * x` otherwise. `alpha` is `[ch, time]`.
pub fn prelu_forward<T: Scalar>(input: &Array3<T>, alpha: &Array2<T>) -> Result<Array3<T>> {
    let (b, c, t) = input.dim();
    if alpha.dim() != (c, t) {
        return Err(Error::Shape(format!(
            "prelu slopes {:?} do not match activations {:?}",
            alpha.dim(),
            (c, t)
        )));
    }
    let mut out = Array3::zeros((b, c, t));
    for bb in 0..b {
        for ch in 0..c {
            for nn in 0..t {
                let x = input[[bb, ch, nn]];
                out[[bb, ch, nn]] = if x >= T::zero() { x } else { alpha[[ch, nn]] * x };
            }
        }
    }
    Ok(out)
}

/// Gradients for the slopes (summed over the batch) and the input.
pub fn prelu_backward<T: Scalar>(
    input: &Array3<T>,
    alpha: &Array2<T>,
    output_grad: &Array3<T>,
) -> Result<(Array2<T>, Array3<T>)> {
    let (b, c, t) = input.dim();
    if alpha.dim() != (c, t) || output_grad.dim() != (b, c, t) {
        return Err(Error::Shape("prelu backward shapes disagree".into()));
    }
    let mut dalpha = Array2::zeros((c, t));
    let mut dinput = Array3::zeros((b, c, t));
    for bb in 0..b {
        for ch in 0..c {
            for nn in 0..t {
                let x = input[[bb, ch, nn]];
                let g = output_grad[[bb, ch, nn]];
                if x >= T::zero() {
                    dinput[[bb, ch, nn]] = g;
                } else {
                    dalpha[[ch, nn]] += g * x;
                    dinput[[bb, ch, nn]] = g * alpha[[ch, nn]];
                }
            }
        }
    }
    Ok((dalpha, dinput))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn elementwise_values() {
        let input = Array3::from_shape_vec((1, 1, 3), vec![2.0, -2.0, 0.0]).unwrap();
        let alpha = arr2(&[[0.25, 0.25, 0.25]]);
        let out = prelu_forward(&input, &alpha).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[2.0, -0.5, 0.0]);
    }

    #[test]
    fn per_position_slopes_apply() {
        let input = Array3::from_shape_vec((1, 1, 2), vec![-1.0, -1.0]).unwrap();
        let alpha = arr2(&[[0.1, 0.5]]);
        let out = prelu_forward(&input, &alpha).unwrap();
        assert_eq!(out.as_slice().unwrap(), &[-0.1, -0.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let input = Array3::<f64>::zeros((1, 2, 3));
        let alpha = Array2::<f64>::zeros((2, 4));
        assert!(matches!(prelu_forward(&input, &alpha), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_routes_gradients_by_sign() {
        let input = Array3::from_shape_vec((2, 1, 2), vec![1.0, -2.0, -3.0, 4.0]).unwrap();
        let alpha = arr2(&[[0.25, 0.5]]);
        let grad = Array3::from_shape_vec((2, 1, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (dalpha, dinput) = prelu_backward(&input, &alpha, &grad).unwrap();
        // Slope gradient collects x where x < 0, summed over the batch.
        assert_eq!(dalpha[[0, 0]], -3.0);
        assert_eq!(dalpha[[0, 1]], -2.0);
        assert_eq!(dinput.as_slice().unwrap(), &[1.0, 0.5, 0.25, 1.0]);
    }
}
