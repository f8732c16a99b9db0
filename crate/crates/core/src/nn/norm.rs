//! Adaptive instance normalisation: `Ψ(x) = a·x + b·IN(x)`.
//!
//! `IN` standardises every (instance, channel) plane with its own mean and
//! biased variance over all spatial voxels.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaInParams {
    /// Identity-branch weight.
    pub a: f64,
    /// Normalisation-branch weight.
    pub b: f64,
    pub epsilon: f64,
}

impl Default for AdaInParams {
    /// `a = 1, b = 0`: a fresh block passes its input through unchanged.
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl AdaInParams {
    pub fn new(a: f64, b: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::config("AdaIN epsilon must be positive"));
        }
        Ok(Self { a, b, epsilon })
    }
}

/// Per-plane statistics saved for the backward pass.
pub(crate) struct InstanceStats<T> {
    /// Normalised input, same shape as the input.
    pub normalized: Tensor<T>,
    /// `1/sqrt(var + eps)` per (instance, channel).
    pub inv_std: Vec<T>,
}

pub(crate) fn instance_normalize<T: Real>(x: &Tensor<T>, epsilon: f64) -> Result<InstanceStats<T>> {
    let (n, c, dims) = x.volume_dims()?;
    let plane: usize = dims.iter().product();
    let mut out = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(n * c);
    for chunk in x.data().chunks(plane.max(1)) {
        let m = plane as f64;
        let mean = chunk.iter().map(|v| v.f64()).sum::<f64>() / m;
        let var = chunk
            .iter()
            .map(|v| {
                let d = v.f64() - mean;
                d * d
            })
            .sum::<f64>()
            / m;
        let inv = 1.0 / (var + epsilon).sqrt();
        out.extend(chunk.iter().map(|v| T::c((v.f64() - mean) * inv)));
        inv_std.push(T::c(inv));
    }
    Ok(InstanceStats {
        normalized: Tensor::new(x.shape(), out)?,
        inv_std,
    })
}

/// Applies AdaIN with fixed blend weights.
pub fn adain<T: Real>(x: &Tensor<T>, params: &AdaInParams) -> Result<Tensor<T>> {
    let stats = instance_normalize(x, params.epsilon)?;
    let (a, b) = (T::c(params.a), T::c(params.b));
    x.zip_map(&stats.normalized, |v, h| a * v + b * h)
}

/// Gradient of `a·x + b·IN(x)` with respect to `x`, `a` and `b`.
pub(crate) fn adain_backward<T: Real>(
    x: &Tensor<T>,
    stats: &InstanceStats<T>,
    a: T,
    b: T,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, T, T)> {
    let (_, _, dims) = x.volume_dims()?;
    let plane: usize = dims.iter().product::<usize>().max(1);
    let m = plane as f64;
    let mut gx = Vec::with_capacity(x.len());
    let mut ga = 0.0f64;
    let mut gb = 0.0f64;
    for (((xs, hs), gs), &inv) in x
        .data()
        .chunks(plane)
        .zip(stats.normalized.data().chunks(plane))
        .zip(grad.data().chunks(plane))
        .zip(&stats.inv_std)
    {
        let mut g_mean = 0.0f64;
        let mut gh_mean = 0.0f64;
        for ((&xv, &h), &g) in xs.iter().zip(hs).zip(gs) {
            let (g, h) = (g.f64(), h.f64());
            ga += g * xv.f64();
            gb += g * h;
            g_mean += g;
            gh_mean += g * h;
        }
        g_mean /= m;
        gh_mean /= m;
        let (af, bf, invf) = (a.f64(), b.f64(), inv.f64());
        gx.extend(hs.iter().zip(gs).map(|(&h, &g)| {
            let (g, h) = (g.f64(), h.f64());
            T::c(af * g + bf * invf * (g - g_mean - h * gh_mean))
        }));
    }
    Ok((Tensor::new(x.shape(), gx)?, T::c(ga), T::c(gb)))
}
