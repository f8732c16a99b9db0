use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Negative-side slope of the network's activation.
pub const LRELU_ALPHA: f64 = 0.1;

/// Rejects leaky-ReLU slopes outside `[0, 1)`.
pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "leaky ReLU slope {alpha} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Elementwise `max(αx, x)`.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let a = T::c(alpha);
    Ok(x.map(|v| if v > T::zero() { v } else { a * v }))
}

/// Softmax over the channel axis of an `N×C×D×H×W` tensor, per voxel.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, dims) = x.volume_dims()?;
    let plane: usize = dims.iter().product();
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * plane;
        for v in 0..plane {
            let at = |k: usize| base + k * plane + v;
            let max = (0..c).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..c {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..c {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, dims) = y.volume_dims()?;
    let plane: usize = dims.iter().product();
    let (ys, gs) = (y.data(), grad.data());
    let mut out = vec![T::zero(); y.len()];
    for s in 0..n {
        let base = s * c * plane;
        for v in 0..plane {
            let at = |k: usize| base + k * plane + v;
            let dot: T = (0..c).map(|k| ys[at(k)] * gs[at(k)]).sum();
            for k in 0..c {
                out[at(k)] = ys[at(k)] * (gs[at(k)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), out)
}
