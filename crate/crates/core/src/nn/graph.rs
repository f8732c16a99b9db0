//! Tape-recorded versions of the layer primitives.

use crate::autodiff::{BackwardCtx, BackwardOp, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::activation::{self, check_alpha};
use crate::nn::conv::{self, ConvSpec};
use crate::nn::norm::{self, InstanceStats};
use crate::tensor::{Real, Tensor};

struct Conv {
    spec: ConvSpec,
    transposed: bool,
}

impl<T: Real> BackwardOp<T> for Conv {
    fn name(&self) -> &'static str {
        if self.transposed {
            "transposed_conv3d"
        } else {
            "dilated_conv3d"
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
        let grads = if self.transposed {
            conv::transposed_conv3d_backward(x, &self.spec, w, ctx.grad, ctx.needs[0])?
        } else {
            conv::dilated_conv3d_backward(x, &self.spec, w, ctx.grad, ctx.needs[0])?
        };
        Ok(vec![grads.input, Some(grads.weight), Some(grads.bias)])
    }
}

pub fn dilated_conv3d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    spec: &ConvSpec,
) -> Result<Var> {
    let y = conv::dilated_conv3d(
        tape.try_value(x)?,
        spec,
        tape.try_value(weight)?,
        tape.try_value(bias)?,
    )?;
    tape.record(
        y,
        &[x, weight, bias],
        Conv {
            spec: *spec,
            transposed: false,
        },
    )
}

pub fn transposed_conv3d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    spec: &ConvSpec,
) -> Result<Var> {
    let y = conv::transposed_conv3d(
        tape.try_value(x)?,
        spec,
        tape.try_value(weight)?,
        tape.try_value(bias)?,
    )?;
    tape.record(
        y,
        &[x, weight, bias],
        Conv {
            spec: *spec,
            transposed: true,
        },
    )
}

struct AdaIn<T> {
    stats: InstanceStats<T>,
}

impl<T: Real> BackwardOp<T> for AdaIn<T> {
    fn name(&self) -> &'static str {
        "adain"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let a = ctx.inputs[1].item()?;
        let b = ctx.inputs[2].item()?;
        let (gx, ga, gb) = norm::adain_backward(ctx.inputs[0], &self.stats, a, b, ctx.grad)?;
        Ok(vec![
            ctx.needs[0].then_some(gx),
            Some(Tensor::new(&[1], vec![ga])?),
            Some(Tensor::new(&[1], vec![gb])?),
        ])
    }
}

/// `a·x + b·IN(x)` with learnable one-element `a` and `b`.
pub fn adain<T: Real>(tape: &mut Tape<T>, x: Var, a: Var, b: Var, epsilon: f64) -> Result<Var> {
    if !(epsilon > 0.0) {
        return Err(Error::config("AdaIN epsilon must be positive"));
    }
    let av = tape.try_value(a)?.item()?;
    let bv = tape.try_value(b)?.item()?;
    let xv = tape.try_value(x)?;
    let stats = norm::instance_normalize(xv, epsilon)?;
    let y = xv.zip_map(&stats.normalized, |v, h| av * v + bv * h)?;
    tape.record(y, &[x, a, b], AdaIn { stats })
}

struct LeakyRelu<T>(T);

impl<T: Real> BackwardOp<T> for LeakyRelu<T> {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let alpha = self.0;
        // Slope α at exactly zero.
        Ok(vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
            if x > T::zero() {
                g
            } else {
                alpha * g
            }
        })?)])
    }
}

pub fn leaky_relu<T: Real>(tape: &mut Tape<T>, x: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let y = activation::leaky_relu(tape.try_value(x)?, alpha)?;
    tape.record(y, &[x], LeakyRelu(T::c(alpha)))
}

struct Softmax;

impl<T: Real> BackwardOp<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(activation::softmax_backward(ctx.output, ctx.grad)?)])
    }
}

pub fn softmax_channels<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let y = activation::softmax_channels(tape.try_value(x)?)?;
    tape.record(y, &[x], Softmax)
}

/// Handles of one convolution block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub weight: Var,
    pub bias: Var,
    pub adain_a: Var,
    pub adain_b: Var,
}

/// Outputs of [`conv_block`].
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    /// AdaIN output, before the activation.
    pub pre_activation: Var,
    pub output: Var,
}

/// Convolution (+bias) → AdaIN → leaky ReLU.
pub fn conv_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &BlockVars,
    spec: &ConvSpec,
    epsilon: f64,
    alpha: f64,
    transposed: bool,
) -> Result<BlockOutput> {
    let z = if transposed {
        transposed_conv3d(tape, x, vars.weight, vars.bias, spec)?
    } else {
        dilated_conv3d(tape, x, vars.weight, vars.bias, spec)?
    };
    let n = adain(tape, z, vars.adain_a, vars.adain_b, epsilon)?;
    let y = leaky_relu(tape, n, alpha)?;
    Ok(BlockOutput {
        pre_activation: n,
        output: y,
    })
}
