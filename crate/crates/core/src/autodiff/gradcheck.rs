use rand::{Rng, SeedableRng};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(|analytic_i|, |numeric_i|, 1e-12)`.
/// `f` must return a scalar.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_coordinates(&f, x, step, 0..x.len())
}

/// [`grad_check`] restricted to `count` coordinates drawn with `seed`.
///
/// Used for large parameter tensors where probing every coordinate costs
/// two full forward passes each.
pub fn grad_check_seeded<F>(
    f: F,
    x: &Tensor<f64>,
    step: f64,
    count: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let picks: Vec<usize> = (0..count.min(n)).map(|_| rng.gen_range(0..n)).collect();
    check_coordinates(&f, x, step, picks)
}

fn check_coordinates<F>(
    f: &F,
    x: &Tensor<f64>,
    step: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(probe);
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::Tape(format!(
                "grad_check needs a scalar function, got shape {:?}",
                value.shape()
            )));
        }
        value.item()
    };

    let analytic = {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = f(&mut tape, v)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Tape(format!(
                "grad_check needs a scalar function, got shape {:?}",
                tape.value(out).shape()
            )));
        }
        tape.backward(out)?.wrt(v)?
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in coords {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
