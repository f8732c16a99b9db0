use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Polynomial learning-rate decay `lr0·(1 − e/E)^power`, stepped per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub initial_lr: f64,
    pub total_epochs: u64,
    pub power: f64,
}

impl Schedule {
    pub fn new(initial_lr: f64, total_epochs: u64) -> Result<Self> {
        let s = Self {
            initial_lr,
            total_epochs,
            power: 2.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::config(format!(
                "initial learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs must be positive"));
        }
        if !(self.power.is_finite() && self.power >= 0.0) {
            return Err(Error::config(format!("decay power {} invalid", self.power)));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr(&self, epoch: u64) -> Result<f64> {
        poly_decay_lr(epoch, self)
    }
}

pub fn poly_decay_lr(epoch: u64, schedule: &Schedule) -> Result<f64> {
    if epoch > schedule.total_epochs {
        return Err(Error::config(format!(
            "epoch {epoch} beyond schedule end {}",
            schedule.total_epochs
        )));
    }
    let frac = 1.0 - epoch as f64 / schedule.total_epochs as f64;
    Ok(schedule.initial_lr * frac.powf(schedule.power))
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed updates.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(params: &[&Tensor<T>]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }
}

/// One optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
}

/// End-of-epoch summary. Validation fields are `NaN` without a validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean validation Dice per foreground class `1..K`.
    pub val_dice: Vec<f64>,
}

impl EpochRecord {
    /// Mean of the defined per-class validation Dice scores.
    pub fn mean_val_dice(&self) -> f64 {
        let defined: Vec<f64> = self.val_dice.iter().copied().filter(|d| d.is_finite()).collect();
        if defined.is_empty() {
            f64::NAN
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

/// Parameters of the best validation epoch so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot<T: Real> {
    pub epoch: u64,
    pub score: f64,
    pub params: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    pub seed: u64,
    pub schedule: Schedule,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed steps.
    pub step: u64,
    pub adam: AdamState<T>,
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<BestSnapshot<T>>,
}

impl<T: Real> TrainState<T> {
    pub fn new(seed: u64, schedule: Schedule, params: &[&Tensor<T>]) -> Self {
        Self {
            seed,
            schedule,
            epoch: 0,
            step: 0,
            adam: AdamState::for_params(params),
            history: Vec::new(),
            epochs: Vec::new(),
            best: None,
        }
    }
}
