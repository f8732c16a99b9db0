//! Kernel initialisers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Fan-in and fan-out of a `(out, in, spatial…)` kernel shape.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (0, 0),
        [n] => (*n, *n),
        [o, i, rest @ ..] => {
            let receptive: usize = rest.iter().product();
            (i * receptive, o * receptive)
        }
    }
}

/// Glorot uniform: `U(−l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn init_glorot_uniform<T: Real>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape);
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::config(format!(
            "Glorot initialiser needs non-zero fans, got shape {shape:?}"
        )));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(shape, |_| T::c(rng.gen_range(-limit..limit))))
}

/// Identity kernel `k(t, a, b) = 1[t = 0]·1[a = b]` for a square
/// `(C, C, u, u, u)` shape.
pub fn init_identity<T: Real>(shape: &[usize]) -> Result<Tensor<T>> {
    let &[o, i, u0, u1, u2] = shape else {
        return Err(Error::config(format!(
            "identity initialiser needs a rank-5 kernel shape, got {shape:?}"
        )));
    };
    if o != i {
        return Err(Error::config(format!(
            "identity initialiser needs equal channel counts, got {o}→{i}"
        )));
    }
    if u0 != u1 || u1 != u2 || u0 % 2 == 0 {
        return Err(Error::config(format!(
            "identity initialiser needs a cubic odd kernel, got {shape:?}"
        )));
    }
    let taps = u0 * u0 * u0;
    let center = taps / 2;
    let mut t = Tensor::zeros(shape);
    for c in 0..o {
        t.data_mut()[(c * i + c) * taps + center] = T::one();
    }
    Ok(t)
}
