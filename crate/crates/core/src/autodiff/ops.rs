//! Elementwise and reduction operations with backward rules.
//!
//! No broadcasting: binary operations require identical shapes.

use crate::autodiff::{BackwardCtx, BackwardOp, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

struct Add;

impl<T: Real> BackwardOp<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(ctx
            .needs
            .iter()
            .map(|&n| n.then(|| ctx.grad.clone()))
            .collect())
    }
}

pub fn add<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let value = tape.try_value(a)?.zip_map(tape.try_value(b)?, |x, y| x + y)?;
    tape.record(value, &[a, b], Add)
}

struct Sub;

impl<T: Real> BackwardOp<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![
            ctx.needs[0].then(|| ctx.grad.clone()),
            ctx.needs[1].then(|| ctx.grad.map(|g| -g)),
        ])
    }
}

pub fn sub<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let value = tape.try_value(a)?.zip_map(tape.try_value(b)?, |x, y| x - y)?;
    tape.record(value, &[a, b], Sub)
}

struct Mul;

impl<T: Real> BackwardOp<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        Ok(vec![
            if ctx.needs[0] {
                Some(ctx.grad.zip_map(b, |g, y| g * y)?)
            } else {
                None
            },
            if ctx.needs[1] {
                Some(ctx.grad.zip_map(a, |g, x| g * x)?)
            } else {
                None
            },
        ])
    }
}

pub fn mul<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let value = tape.try_value(a)?.zip_map(tape.try_value(b)?, |x, y| x * y)?;
    tape.record(value, &[a, b], Mul)
}

struct Scale<T>(T);

impl<T: Real> BackwardOp<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let k = self.0;
        Ok(vec![Some(ctx.grad.map(|g| g * k))])
    }
}

pub fn scale<T: Real>(tape: &mut Tape<T>, x: Var, factor: f64) -> Result<Var> {
    let k = T::c(factor);
    let value = tape.try_value(x)?.map(|v| v * k);
    tape.record(value, &[x], Scale(k))
}

struct Square;

impl<T: Real> BackwardOp<T> for Square {
    fn name(&self) -> &'static str {
        "square"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let two = T::c(2.0);
        Ok(vec![Some(
            ctx.grad.zip_map(ctx.inputs[0], |g, x| two * g * x)?,
        )])
    }
}

pub fn square<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let value = tape.try_value(x)?.map(|v| v * v);
    tape.record(value, &[x], Square)
}

struct Sum {
    scale: f64,
}

impl<T: Real> BackwardOp<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = ctx.grad.item()? * T::c(self.scale);
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape(), g))])
    }
}

/// Sum of all elements, as a scalar.
pub fn sum<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let value = Tensor::scalar(tape.try_value(x)?.sum());
    tape.record(value, &[x], Sum { scale: 1.0 })
}

/// Arithmetic mean of all elements, as a scalar.
pub fn mean<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let t = tape.try_value(x)?;
    let n = t.len().max(1) as f64;
    let value = Tensor::scalar(T::c(t.sum().f64() / n));
    tape.record(value, &[x], Sum { scale: 1.0 / n })
}
