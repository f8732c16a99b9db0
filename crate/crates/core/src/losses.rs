//! Segmentation losses on per-voxel class probabilities.
//!
//! All losses take a probability tensor `P` (`N×K×D×H×W`, recorded on a
//! tape) and a constant one-hot target `Q` of the same shape.
//!
//! * Dice loss in squared-difference form: `Ψ / (ΣP² + ΣQ²)` with
//!   `Ψ = Σ(P − Q)²`, which equals `1 − 2ΣPQ / (ΣP² + ΣQ²)`.
//! * Dice-squared loss (DSL): the Dice term plus `Ψ / I`, a mean squared
//!   error that reuses the same `Ψ`.
//! * Focal loss: `−α_k (1 − p)^γ log p` on the true-class probability,
//!   averaged over voxels.
//! * DSF: `DSL + λ·FL`.
//! * Class-weighted cross-entropy.
//!
//! Per-class terms are combined as a weighted mean `Σ w_k·term_k / Σ w_k`.
//! A class absent from both `P` and `Q` (zero denominator) contributes 0.

use std::cell::Cell;

use crate::autodiff::{ops, BackwardCtx, BackwardOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to this floor before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

thread_local! {
    static SQDIFF_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of per-class squared-difference reductions run on this thread.
///
/// Each Dice-family loss evaluation performs exactly one such reduction per
/// class; the MSE term of the DSL reuses it.
pub fn squared_difference_passes() -> u64 {
    SQDIFF_PASSES.with(Cell::get)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("class weights must not be empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(format!(
                "class weights must be finite and non-negative, got {weights:?}"
            )));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::config("at least one class weight must be positive"));
        }
        Ok(Self(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes.max(1)])
    }

    /// `w_k = N / (K · n_k)` from per-class voxel counts. Classes with no
    /// voxels get the largest weight seen among the others.
    pub fn inverse_frequency(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        let k = counts.len() as f64;
        if total == 0 {
            return Err(Error::config("cannot derive class weights from zero voxels"));
        }
        let raw: Vec<Option<f64>> = counts
            .iter()
            .map(|&n| (n > 0).then(|| total as f64 / (k * n as f64)))
            .collect();
        let fallback = raw.iter().flatten().copied().fold(0.0, f64::max);
        Self::new(raw.into_iter().map(|w| w.unwrap_or(fallback)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights rescaled to sum to one.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.0.iter().sum();
        self.0.iter().map(|w| w / total).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Focal exponent γ.
    pub gamma: f64,
    /// Focal class weights α_k.
    pub alpha: Vec<f64>,
    /// Multiplier of the focal term in DSF.
    pub lambda_fl: f64,
    /// Dice-family class weights w_k.
    pub weights: ClassWeights,
}

impl LossConfig {
    /// γ = 2, λ = 10 and α_k = w_k normalised to sum to one.
    pub fn new(weights: ClassWeights) -> Self {
        Self {
            gamma: 2.0,
            alpha: weights.normalized(),
            lambda_fl: 10.0,
            weights,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::config("focal gamma must be non-negative"));
        }
        if !(self.lambda_fl >= 0.0) {
            return Err(Error::config("focal multiplier must be non-negative"));
        }
        if self.alpha.len() != classes || self.weights.len() != classes {
            return Err(Error::config(format!(
                "loss configured for {} classes but predictions have {classes}",
                self.weights.len()
            )));
        }
        if self.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::config("focal alpha must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One-hot encodes a label grid into a `1×K×D×H×W` tensor.
pub fn one_hot<T: Real>(labels: &[u8], dims: [usize; 3], classes: usize) -> Result<Tensor<T>> {
    let voxels: usize = dims.iter().product();
    if labels.len() != voxels {
        return Err(Error::shape(format!(
            "{} labels for extents {dims:?}",
            labels.len()
        )));
    }
    let mut out = Tensor::zeros(&[1, classes, dims[0], dims[1], dims[2]]);
    let data = out.data_mut();
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::shape(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        data[l * voxels + i] = T::one();
    }
    Ok(out)
}

/// Per-voxel argmax over channels; ties go to the lower class index.
pub fn argmax_channels<T: Real>(p: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, c, dims) = p.volume_dims()?;
    if n != 1 {
        return Err(Error::shape(format!("argmax expects a single instance, got {n}")));
    }
    let plane: usize = dims.iter().product();
    let d = p.data();
    Ok((0..plane)
        .map(|v| {
            let mut best = 0;
            for k in 1..c {
                if d[k * plane + v] > d[best * plane + v] {
                    best = k;
                }
            }
            best as u8
        })
        .collect())
}

/// Sufficient statistics of one class for the Dice family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassSums {
    /// `Ψ = Σ(P − Q)²`
    pub sq_diff: f64,
    pub p_sq: f64,
    pub q_sq: f64,
    pub pq: f64,
}

impl ClassSums {
    pub fn denominator(&self) -> f64 {
        self.p_sq + self.q_sq
    }

    /// `Ψ / (ΣP² + ΣQ²)`, or 0 for an empty class.
    pub fn dice_term(&self) -> f64 {
        let s = self.denominator();
        if s > 0.0 {
            self.sq_diff / s
        } else {
            0.0
        }
    }

    /// `1 − 2ΣPQ / (ΣP² + ΣQ²)`, or 0 for an empty class.
    pub fn dice_term_overlap_form(&self) -> f64 {
        let s = self.denominator();
        if s > 0.0 {
            1.0 - 2.0 * self.pq / s
        } else {
            0.0
        }
    }
}

struct Layout {
    instances: usize,
    classes: usize,
    plane: usize,
}

fn layout<T: Real>(p: &Tensor<T>, q: &Tensor<T>) -> Result<Layout> {
    p.expect_same_shape(q)?;
    let (n, c, dims) = p.volume_dims()?;
    Ok(Layout {
        instances: n,
        classes: c,
        plane: dims.iter().product(),
    })
}

fn class_slices<'a, T>(data: &'a [T], l: &'a Layout, k: usize) -> impl Iterator<Item = &'a [T]> + 'a {
    (0..l.instances).map(move |s| {
        let start = (s * l.classes + k) * l.plane;
        &data[start..start + l.plane]
    })
}

/// Per-class sums, one pass over the data per class.
pub fn class_sums<T: Real>(p: &Tensor<T>, q: &Tensor<T>) -> Result<Vec<ClassSums>> {
    let l = layout(p, q)?;
    let sums = (0..l.classes)
        .map(|k| {
            let mut s = ClassSums::default();
            for (ps, qs) in class_slices(p.data(), &l, k).zip(class_slices(q.data(), &l, k)) {
                for (&pv, &qv) in ps.iter().zip(qs) {
                    let (pv, qv) = (pv.f64(), qv.f64());
                    let d = pv - qv;
                    s.sq_diff += d * d;
                    s.p_sq += pv * pv;
                    s.q_sq += qv * qv;
                    s.pq += pv * qv;
                }
            }
            SQDIFF_PASSES.with(|c| c.set(c.get() + 1));
            s
        })
        .collect();
    Ok(sums)
}

fn check_weights(weights: &ClassWeights, classes: usize) -> Result<()> {
    if weights.len() != classes {
        return Err(Error::config(format!(
            "{} class weights for {classes} classes",
            weights.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum DiceKind {
    Dice,
    DiceSquared,
}

struct DiceFamily {
    kind: DiceKind,
    sums: Vec<ClassSums>,
    weights: Vec<f64>,
    voxels: f64,
}

impl DiceFamily {
    fn value(&self) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        for (s, &w) in self.sums.iter().zip(&self.weights) {
            let mut term = s.dice_term();
            if self.kind == DiceKind::DiceSquared {
                term += s.sq_diff / self.voxels;
            }
            acc += w * term;
        }
        acc / total
    }
}

impl<T: Real> BackwardOp<T> for DiceFamily {
    fn name(&self) -> &'static str {
        match self.kind {
            DiceKind::Dice => "dice_loss",
            DiceKind::DiceSquared => "dsl",
        }
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (p, q) = (ctx.inputs[0], ctx.inputs[1]);
        let l = layout(p, q)?;
        let upstream = ctx.grad.item()?.f64();
        let total: f64 = self.weights.iter().sum();
        let mut g = vec![T::zero(); p.len()];
        for k in 0..l.classes {
            let s = &self.sums[k];
            let w = self.weights[k] / total * upstream;
            let den = s.denominator();
            // d/dP [Ψ/S] = 2(P−Q)/S − 2PΨ/S²,  d/dP [Ψ/I] = 2(P−Q)/I
            let (c_diff, c_p) = if den > 0.0 {
                (2.0 / den, -2.0 * s.sq_diff / (den * den))
            } else {
                (0.0, 0.0)
            };
            let c_mse = match self.kind {
                DiceKind::Dice => 0.0,
                DiceKind::DiceSquared => 2.0 / self.voxels,
            };
            for s_idx in 0..l.instances {
                let start = (s_idx * l.classes + k) * l.plane;
                for i in start..start + l.plane {
                    let (pv, qv) = (p.data()[i].f64(), q.data()[i].f64());
                    g[i] = T::c(w * ((c_diff + c_mse) * (pv - qv) + c_p * pv));
                }
            }
        }
        Ok(vec![Some(Tensor::new(p.shape(), g)?), None])
    }
}

fn dice_family<T: Real>(
    tape: &mut Tape<T>,
    p: Var,
    q: &Tensor<T>,
    weights: &ClassWeights,
    kind: DiceKind,
) -> Result<Var> {
    let pv = tape.try_value(p)?;
    let l = layout(pv, q)?;
    check_weights(weights, l.classes)?;
    let sums = class_sums(pv, q)?;
    let op = DiceFamily {
        kind,
        sums,
        weights: weights.as_slice().to_vec(),
        voxels: (l.instances * l.plane) as f64,
    };
    let value = Tensor::scalar(T::c(op.value()));
    let qv = tape.constant(q.clone());
    tape.record(value, &[p, qv], op)
}

/// Weighted multi-class Dice loss, `Σ w_k Ψ_k/(ΣP_k² + ΣQ_k²) / Σ w_k`.
pub fn dice_loss<T: Real>(tape: &mut Tape<T>, p: Var, q: &Tensor<T>, weights: &ClassWeights) -> Result<Var> {
    dice_family(tape, p, q, weights, DiceKind::Dice)
}

/// Weighted Dice-squared loss: the Dice term plus `Ψ_k / I` per class.
pub fn dsl<T: Real>(tape: &mut Tape<T>, p: Var, q: &Tensor<T>, weights: &ClassWeights) -> Result<Var> {
    dice_family(tape, p, q, weights, DiceKind::DiceSquared)
}

struct Focal {
    alpha: Vec<f64>,
    gamma: f64,
    voxels: f64,
}

impl Focal {
    /// Loss contribution and derivative for one (probability, target) pair.
    fn term(&self, p: f64, q: f64, alpha: f64) -> (f64, f64) {
        if q == 0.0 || alpha == 0.0 {
            return (0.0, 0.0);
        }
        let clamped = p < PROB_FLOOR;
        let pc = p.max(PROB_FLOOR).min(1.0);
        let one_minus = 1.0 - pc;
        let log_p = pc.ln();
        let modulator = if self.gamma == 0.0 { 1.0 } else { one_minus.powf(self.gamma) };
        let value = -alpha * q * modulator * log_p;
        let deriv = if clamped {
            0.0
        } else {
            // d/dp [−(1−p)^γ log p] = γ(1−p)^{γ−1} log p − (1−p)^γ / p
            let mod_deriv = if self.gamma == 0.0 || one_minus == 0.0 {
                0.0
            } else {
                self.gamma * one_minus.powf(self.gamma - 1.0) * log_p
            };
            alpha * q * (mod_deriv - modulator / pc)
        };
        (value, deriv)
    }
}

impl<T: Real> BackwardOp<T> for Focal {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (p, q) = (ctx.inputs[0], ctx.inputs[1]);
        let l = layout(p, q)?;
        let scale = ctx.grad.item()?.f64() / self.voxels;
        let mut g = vec![T::zero(); p.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let k = (i / l.plane) % l.classes;
            let (_, d) = self.term(p.data()[i].f64(), q.data()[i].f64(), self.alpha[k]);
            *gi = T::c(d * scale);
        }
        Ok(vec![Some(Tensor::new(p.shape(), g)?), None])
    }
}

/// Focal loss `Σ_k −α_k (1 − p_k)^γ log p_k Q_k`, averaged over voxels.
pub fn focal_loss<T: Real>(
    tape: &mut Tape<T>,
    p: Var,
    q: &Tensor<T>,
    alpha: &[f64],
    gamma: f64,
) -> Result<Var> {
    let pv = tape.try_value(p)?;
    let l = layout(pv, q)?;
    if alpha.len() != l.classes {
        return Err(Error::config(format!(
            "{} focal weights for {} classes",
            alpha.len(),
            l.classes
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::config("focal gamma must be non-negative"));
    }
    let op = Focal {
        alpha: alpha.to_vec(),
        gamma,
        voxels: (l.instances * l.plane) as f64,
    };
    let mut total = 0.0;
    for (i, (&pi, &qi)) in pv.data().iter().zip(q.data()).enumerate() {
        let k = (i / l.plane) % l.classes;
        total += op.term(pi.f64(), qi.f64(), op.alpha[k]).0;
    }
    let value = Tensor::scalar(T::c(total / op.voxels));
    let qv = tape.constant(q.clone());
    tape.record(value, &[p, qv], op)
}

/// `DSL + λ·FL`.
pub fn dsf<T: Real>(tape: &mut Tape<T>, p: Var, q: &Tensor<T>, config: &LossConfig) -> Result<Var> {
    let classes = tape.try_value(p)?.volume_dims()?.1;
    config.validate(classes)?;
    let d = dsl(tape, p, q, &config.weights)?;
    if config.lambda_fl == 0.0 {
        return Ok(d);
    }
    let f = focal_loss(tape, p, q, &config.alpha, config.gamma)?;
    let f = ops::scale(tape, f, config.lambda_fl)?;
    ops::add(tape, d, f)
}

struct WeightedCe {
    weights: Vec<f64>,
    voxels: f64,
}

impl<T: Real> BackwardOp<T> for WeightedCe {
    fn name(&self) -> &'static str {
        "weighted_ce"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (p, q) = (ctx.inputs[0], ctx.inputs[1]);
        let l = layout(p, q)?;
        let scale = ctx.grad.item()?.f64() / self.voxels;
        let g: Vec<T> = p
            .data()
            .iter()
            .zip(q.data())
            .enumerate()
            .map(|(i, (&pi, &qi))| {
                let (pi, qi) = (pi.f64(), qi.f64());
                let k = (i / l.plane) % l.classes;
                if pi < PROB_FLOOR || qi == 0.0 {
                    T::zero()
                } else {
                    T::c(-self.weights[k] * qi / pi * scale)
                }
            })
            .collect();
        Ok(vec![Some(Tensor::new(p.shape(), g)?), None])
    }
}

/// Class-weighted cross-entropy `Σ_k −w_k Q_k log P_k`, averaged over voxels.
pub fn weighted_ce<T: Real>(tape: &mut Tape<T>, p: Var, q: &Tensor<T>, weights: &ClassWeights) -> Result<Var> {
    let pv = tape.try_value(p)?;
    let l = layout(pv, q)?;
    check_weights(weights, l.classes)?;
    let w = weights.as_slice();
    let mut total = 0.0;
    for (i, (&pi, &qi)) in pv.data().iter().zip(q.data()).enumerate() {
        let qi = qi.f64();
        if qi != 0.0 {
            let k = (i / l.plane) % l.classes;
            total -= w[k] * qi * pi.f64().max(PROB_FLOOR).min(1.0).ln();
        }
    }
    let op = WeightedCe {
        weights: w.to_vec(),
        voxels: (l.instances * l.plane) as f64,
    };
    let value = Tensor::scalar(T::c(total / op.voxels));
    let qv = tape.constant(q.clone());
    tape.record(value, &[p, qv], op)
}

/// Evaluates a tape loss on plain tensors and returns its value.
pub fn evaluate<T, F>(p: &Tensor<T>, f: F) -> Result<f64>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let out = f(&mut tape, pv)?;
    Ok(tape.value(out).item()?.f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(values: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, 1, 1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_layout_and_range() {
        let t: Tensor<f64> = one_hot(&[0, 2, 1], [1, 1, 3], 3).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 1, 3]);
        assert_eq!(
            t.data(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert!(one_hot::<f64>(&[3], [1, 1, 1], 3).is_err());
    }

    #[test]
    fn argmax_roundtrip_and_tie_rule() {
        let labels = [0u8, 2, 1, 1, 0];
        let t: Tensor<f64> = one_hot(&labels, [1, 1, 5], 3).unwrap();
        assert_eq!(argmax_channels(&t).unwrap(), labels);
        let uniform = Tensor::<f64>::full(&[1, 3, 1, 1, 4], 1.0 / 3.0);
        assert_eq!(argmax_channels(&uniform).unwrap(), vec![0; 4]);
    }

    #[test]
    fn perfect_overlap_is_zero() {
        let q = binary(&[1.0, 0.0, 1.0, 1.0]);
        let w = ClassWeights::uniform(1);
        assert_eq!(evaluate(&q, |t, p| dice_loss(t, p, &q, &w)).unwrap(), 0.0);
        assert_eq!(evaluate(&q, |t, p| dsl(t, p, &q, &w)).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_hand_case() {
        let p = binary(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = binary(&[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = ClassWeights::uniform(1);
        assert_eq!(evaluate(&p, |t, v| dice_loss(t, v, &q, &w)).unwrap(), 1.0);
        assert_eq!(evaluate(&p, |t, v| dsl(t, v, &q, &w)).unwrap(), 1.5);
    }

    #[test]
    fn single_pass_per_class() {
        let p = Tensor::<f64>::full(&[1, 4, 2, 2, 2], 0.25);
        let q: Tensor<f64> = one_hot(&[0, 1, 2, 3, 0, 1, 2, 3], [2, 2, 2], 4).unwrap();
        let w = ClassWeights::uniform(4);
        let before = squared_difference_passes();
        evaluate(&p, |t, v| dsl(t, v, &q, &w)).unwrap();
        assert_eq!(squared_difference_passes() - before, 4);
    }

    #[test]
    fn focal_hand_value() {
        // One voxel, two classes, true class probability 0.5, γ = 2, α = 1.
        let p = Tensor::new(&[1, 2, 1, 1, 1], vec![0.5, 0.5]).unwrap();
        let q = Tensor::new(&[1, 2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        let v = evaluate(&p, |t, x| focal_loss(t, x, &q, &[1.0, 1.0], 2.0)).unwrap();
        assert!((v - (-0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((v - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn uniform_prediction_ce_is_log_k() {
        let p = Tensor::<f64>::full(&[1, 4, 1, 2, 2], 0.25);
        let q: Tensor<f64> = one_hot(&[0, 1, 2, 3], [1, 2, 2], 4).unwrap();
        let v = evaluate(&p, |t, x| weighted_ce(t, x, &q, &ClassWeights::uniform(4))).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(ClassWeights::new(vec![0.0, 0.0]).is_err());
        assert!(ClassWeights::new(vec![-1.0, 1.0]).is_err());
        assert!(ClassWeights::new(vec![f64::NAN]).is_err());
        let w = ClassWeights::inverse_frequency(&[90, 9, 1]).unwrap();
        assert!(w.as_slice()[2] > w.as_slice()[1] && w.as_slice()[1] > w.as_slice()[0]);
    }
}
