use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::trainer::AdamState;

/// One bias-corrected Adam update. Parameters are named `param[i]` in
/// error messages; see [`adam_step_named`].
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let names: Vec<String> = (0..params.len()).map(|i| format!("param[{i}]")).collect();
    adam_step_named(params, grads, state, lr, &names)
}

/// [`adam_step`] with caller-supplied parameter names for diagnostics.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// gradient leaves parameters and moments untouched.
pub fn adam_step_named<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    names: &[String],
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n || names.len() != n {
        return Err(Error::shape(format!(
            "adam: {n} parameters, {} gradients, {}/{} moments, {} names",
            grads.len(),
            state.m.len(),
            state.v.len(),
            names.len()
        )));
    }
    for i in 0..n {
        let shape = params[i].shape();
        if grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape {
            return Err(Error::shape(format!(
                "adam: {} has shape {shape:?} but its gradient is {:?}",
                names[i],
                grads[i].shape()
            )));
        }
        if let Some(j) = grads[i].data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("gradient of {} (element {j})", names[i]),
            });
        }
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::config(format!("learning rate {lr} invalid")));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..n {
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(grads[i].data()) {
            let g = g.f64();
            let mi = b1 * m.f64() + (1.0 - b1) * g;
            let vi = b2 * v.f64() + (1.0 - b2) * g * g;
            *m = T::c(mi);
            *v = T::c(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            *p = T::c(p.f64() - step);
        }
    }
    Ok(())
}
