use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{self, argmax_channels, one_hot, ClassWeights, LossConfig};
use crate::metrics::{dice_score, evaluate_case, BinaryMask, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, Network};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};
use crate::trainer::{
    adam_step_named, BestSnapshot, EpochRecord, Schedule, StepRecord, TrainState,
};
use crate::volio::{normalize_zscore, Dataset, LabelMap, Volume};

// Independent RNG streams derived from the run seed.
const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

pub const HISTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Dice-squared loss plus λ·focal.
    Dsf,
    Dsl,
    Dice,
    Focal,
    /// Unweighted cross-entropy.
    Ce,
    /// Class-weighted cross-entropy.
    Wce,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [Self::Dsf, Self::Dsl, Self::Dice, Self::Focal, Self::Ce, Self::Wce];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dsf => "dsf",
            Self::Dsl => "dsl",
            Self::Dice => "dice",
            Self::Focal => "focal",
            Self::Ce => "ce",
            Self::Wce => "wce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config(format!("unknown loss {s:?} (expected dsf, dsl, dice, focal, ce or wce)"))
            })
    }
}

/// How the Dice-family and focal class weights are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightMode {
    /// `N / (K · n_k)` over the training split's labels.
    InverseFrequency,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSettings {
    pub kind: LossKind,
    pub gamma: f64,
    pub lambda_fl: f64,
    pub weights: WeightMode,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            kind: LossKind::Dsf,
            gamma: 2.0,
            lambda_fl: 10.0,
            weights: WeightMode::InverseFrequency,
        }
    }
}

impl LossSettings {
    /// Concrete loss parameters for labels with the given class counts.
    pub fn resolve(&self, counts: &[u64]) -> Result<LossConfig> {
        let weights = match (&self.weights, self.kind) {
            (_, LossKind::Ce) | (WeightMode::Uniform, _) => ClassWeights::uniform(counts.len()),
            (WeightMode::InverseFrequency, _) => ClassWeights::inverse_frequency(counts)?,
            (WeightMode::Explicit(w), _) => ClassWeights::new(w.clone())?,
        };
        let mut config = LossConfig::new(weights);
        config.gamma = self.gamma;
        config.lambda_fl = self.lambda_fl;
        config.validate(counts.len())?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub epochs: u64,
    pub initial_lr: f64,
    pub seed: u64,
    /// Fraction of cases held out for validation (hold-out mode).
    pub val_fraction: f64,
    /// `k > 1` switches to k-fold mode; `fold` picks the validation fold.
    pub folds: usize,
    pub fold: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossSettings::default(),
            epochs: 30,
            initial_lr: 1e-3,
            seed: 0,
            val_fraction: 0.2,
            folds: 1,
            fold: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        Schedule::new(self.initial_lr, self.epochs)?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.folds > 1 && self.fold >= self.folds {
            return Err(Error::config(format!(
                "fold {} outside 0..{}",
                self.fold, self.folds
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.initial_lr, self.epochs)
    }
}

/// Case indices used for training and validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    order
}

impl Split {
    /// Seeded shuffle, then the last `round(n · fraction)` cases validate.
    /// At least one case stays on each side when `n ≥ 2` and `fraction > 0`.
    pub fn holdout(n: usize, seed: u64, fraction: f64) -> Self {
        let order = seeded_permutation(n, seed);
        let mut val = (n as f64 * fraction).round() as usize;
        if fraction > 0.0 && n >= 2 {
            val = val.clamp(1, n - 1);
        }
        let val = val.min(n);
        Self {
            train: order[..n - val].to_vec(),
            val: order[n - val..].to_vec(),
        }
    }

    /// Fold `fold` of a seeded `folds`-way partition validates.
    pub fn k_fold(n: usize, seed: u64, folds: usize, fold: usize) -> Self {
        let order = seeded_permutation(n, seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, c) in order.into_iter().enumerate() {
            if i % folds == fold {
                val.push(c);
            } else {
                train.push(c);
            }
        }
        Self { train, val }
    }

    pub fn for_config(n: usize, config: &TrainConfig) -> Self {
        if config.folds > 1 {
            Self::k_fold(n, config.seed, config.folds, config.fold)
        } else {
            Self::holdout(n, config.seed, config.val_fraction)
        }
    }
}

/// Network input for a volume: z-score normalised, `1×1×D×H×W`.
pub fn prepare_input<T: Real>(volume: &Volume) -> Result<Tensor<T>> {
    Ok(normalize_zscore(volume)?.to_tensor())
}

struct Sample<T: Real> {
    input: Tensor<T>,
    target: Tensor<T>,
    labels: LabelMap,
}

/// Stateful training loop over an in-memory dataset.
pub struct Trainer<T: Real> {
    config: TrainConfig,
    net: Network<T>,
    state: TrainState<T>,
    loss: LossConfig,
    split: Split,
    names: Vec<String>,
    samples: Vec<Sample<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let net = Network::build(&config.model, config.seed)?;
        let state = TrainState::new(config.seed, config.schedule()?, &net.params());
        Self::assemble(config, dataset, net, state)
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(config: TrainConfig, dataset: &Dataset, path: impl AsRef<Path>) -> Result<Self> {
        config.validate()?;
        let path = path.as_ref();
        let ckpt = load_checkpoint::<T>(&config.model, path)?;
        let state = ckpt.train_state.ok_or_else(|| {
            Error::config("checkpoint has no training state to resume from").with_path(path)
        })?;
        if state.seed != config.seed || state.schedule != config.schedule()? {
            return Err(Error::config(
                "checkpoint seed or schedule differs from the run configuration",
            )
            .with_path(path));
        }
        Self::assemble(config, dataset, ckpt.network, state)
    }

    fn assemble(config: TrainConfig, dataset: &Dataset, net: Network<T>, state: TrainState<T>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = config.model.num_classes;
        let split = Split::for_config(dataset.len(), &config);
        if split.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut samples = Vec::with_capacity(dataset.len());
        for case in &dataset.cases {
            let context = |e: Error| Error::config(format!("case {}: {e}", case.id));
            let labels = case.labels.clone().with_classes(k).map_err(context)?;
            labels.check_aligned(&case.volume).map_err(context)?;
            let input = prepare_input::<T>(&case.volume).map_err(|e| match e {
                Error::ZeroVariance => context(e),
                other => other,
            })?;
            net.check_input(input.shape()).map_err(context)?;
            let target = one_hot(labels.data(), labels.dims(), k)?;
            samples.push(Sample {
                input,
                target,
                labels,
            });
        }
        let mut counts = vec![0u64; k];
        for &i in &split.train {
            for (c, n) in counts.iter_mut().zip(samples[i].labels.class_counts()) {
                *c += n;
            }
        }
        let loss = config.loss.resolve(&counts)?;
        Ok(Self {
            names: net.param_names(),
            config,
            net,
            state,
            loss,
            split,
            samples,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    pub fn into_parts(self) -> (Network<T>, TrainState<T>) {
        (self.net, self.state)
    }

    fn loss_on_tape(&self, tape: &mut Tape<T>, p: Var, q: &Tensor<T>) -> Result<Var> {
        let l = &self.loss;
        match self.config.loss.kind {
            LossKind::Dsf => losses::dsf(tape, p, q, l),
            LossKind::Dsl => losses::dsl(tape, p, q, &l.weights),
            LossKind::Dice => losses::dice_loss(tape, p, q, &l.weights),
            LossKind::Focal => losses::focal_loss(tape, p, q, &l.alpha, l.gamma),
            LossKind::Ce | LossKind::Wce => losses::weighted_ce(tape, p, q, &l.weights),
        }
    }

    /// Order of training cases in `epoch`, fixed by the seed.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order = self.split.train.clone();
        let seed = derive_seed(derive_seed(self.config.seed, SHUFFLE_STREAM), epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    fn step(&mut self, case: usize, lr: f64) -> Result<f64> {
        let sample = &self.samples[case];
        let mut tape = Tape::new();
        let input = tape.constant(sample.input.clone());
        let params = self.net.bind(&mut tape, true);
        let out = self.net.forward_on_tape(&mut tape, input, &params)?;
        let loss = self.loss_on_tape(&mut tape, out.probabilities, &sample.target)?;
        let value = tape.value(loss).item()?.f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{} loss at step {}", self.config.loss.kind, self.state.step + 1),
            });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = params.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?;
        let mut refs = self.net.params_mut();
        adam_step_named(&mut refs, &grads, &mut self.state.adam, lr, &self.names)?;
        Ok(value)
    }

    /// Validation loss and per-class Dice over the validation split.
    pub fn validate(&self) -> Result<(f64, Vec<f64>)> {
        let k = self.config.model.num_classes;
        if self.split.val.is_empty() {
            return Ok((f64::NAN, vec![f64::NAN; k - 1]));
        }
        let mut loss = 0.0;
        let mut dice = vec![0.0; k - 1];
        for &i in &self.split.val {
            let s = &self.samples[i];
            let mut tape = Tape::new();
            let input = tape.constant(s.input.clone());
            let params = self.net.bind(&mut tape, false);
            let out = self.net.forward_on_tape(&mut tape, input, &params)?;
            let l = self.loss_on_tape(&mut tape, out.probabilities, &s.target)?;
            loss += tape.value(l).item()?.f64();
            let pred = argmax_channels(tape.value(out.probabilities))?;
            let pred = LabelMap::new(s.labels.dims(), s.labels.spacing(), pred, k)?;
            for (c, d) in dice.iter_mut().enumerate() {
                let class = c as u8 + 1;
                *d += dice_score(
                    &BinaryMask::from_labels(&pred, class),
                    &BinaryMask::from_labels(&s.labels, class),
                )?;
            }
        }
        let n = self.split.val.len() as f64;
        Ok((loss / n, dice.into_iter().map(|d| d / n).collect()))
    }

    /// Runs one epoch: one step per training case in seeded order, then
    /// validation and best-snapshot bookkeeping.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(Error::config(format!(
                "run already completed {} epochs",
                self.config.epochs
            )));
        }
        let epoch = self.state.epoch;
        let lr = self.state.schedule.lr(epoch)?;
        let mut total = 0.0;
        let order = self.epoch_order(epoch);
        for &case in &order {
            let start = Instant::now();
            let loss = self.step(case, lr)?;
            self.state.step += 1;
            total += loss;
            self.state.history.push(StepRecord {
                step: self.state.step,
                epoch,
                lr,
                loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        let (val_loss, val_dice) = self.validate()?;
        let record = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
            val_dice,
        };
        let score = record.mean_val_dice();
        if score.is_finite() && self.state.best.as_ref().is_none_or(|b| score > b.score) {
            self.state.best = Some(BestSnapshot {
                epoch,
                score,
                params: self.net.params().into_iter().cloned().collect(),
            });
        }
        log::info!(
            "epoch {}/{} lr {lr:.3e} train {:.5} val {:.5} dice {:?}",
            epoch + 1,
            self.config.epochs,
            record.train_loss,
            record.val_loss,
            record.val_dice
        );
        self.state.epoch += 1;
        self.state.epochs.push(record.clone());
        Ok(record)
    }

    /// Runs up to `epochs` more epochs, stopping at the schedule's end.
    pub fn run(&mut self, epochs: u64) -> Result<()> {
        for _ in 0..epochs {
            if self.is_finished() {
                break;
            }
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run(self.config.epochs.saturating_sub(self.state.epoch))
    }

    /// Writes network and full training state.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.net, Some(&self.state), path)
    }

    /// Network with the best validation parameters, if any epoch was scored.
    pub fn best_network(&self) -> Result<Option<Network<T>>> {
        let Some(best) = &self.state.best else {
            return Ok(None);
        };
        let mut net = self.net.clone();
        net.set_params(best.params.clone())?;
        Ok(Some(net))
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train<T: Real>(config: &TrainConfig, dataset: &Dataset) -> Result<(Network<T>, TrainState<T>)> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    trainer.run_to_end()?;
    Ok(trainer.into_parts())
}

/// Arg-max segmentation of a volume, ties to the lower class index.
pub fn predict<T: Real>(net: &Network<T>, volume: &Volume) -> Result<LabelMap> {
    let probs = net.forward(&prepare_input::<T>(volume)?)?;
    let labels = argmax_channels(&probs)?;
    LabelMap::new(volume.dims(), volume.spacing(), labels, net.config().num_classes)
}

/// Predicts every case and scores it against its labels.
pub fn evaluate<T: Real>(net: &Network<T>, dataset: &Dataset) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for case in &dataset.cases {
        let pred = predict(net, &case.volume)?;
        let spacing = case.labels.spacing().map(f64::from);
        report.push(&case.id, evaluate_case(&pred, &case.labels, spacing, net.config().num_classes)?);
    }
    Ok(report)
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut out = format!("# schema-version: {HISTORY_SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(crate::volio::csv_error)?;
        for row in rows {
            w.write_record(row).map_err(crate::volio::csv_error)?;
        }
        w.flush()?;
    }
    std::fs::write(path, out).map_err(|e| Error::from(e).with_path(path))
}

/// Per-step history: `step, epoch, lr, loss, wall_ms`.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[StepRecord]) -> Result<()> {
    let rows = history
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.epoch.to_string(),
                format!("{}", r.lr),
                format!("{}", r.loss),
                format!("{:.3}", r.wall_ms),
            ]
        })
        .collect();
    write_csv(path.as_ref(), &["step", "epoch", "lr", "loss", "wall_ms"], rows)
}

/// Per-epoch summary: losses and validation Dice per foreground class.
pub fn write_epochs_csv(path: impl AsRef<Path>, epochs: &[EpochRecord]) -> Result<()> {
    let classes = epochs.first().map_or(0, |e| e.val_dice.len());
    let mut header: Vec<String> = ["epoch", "train_loss", "val_loss"].map(String::from).to_vec();
    header.extend((1..=classes).map(|k| format!("val_dice_{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let na = |v: f64| if v.is_finite() { format!("{v}") } else { "NA".into() };
    let rows = epochs
        .iter()
        .map(|e| {
            let mut row = vec![e.epoch.to_string(), na(e.train_loss), na(e.val_loss)];
            row.extend(e.val_dice.iter().map(|&d| na(d)));
            row
        })
        .collect();
    write_csv(path.as_ref(), &header, rows)
}
