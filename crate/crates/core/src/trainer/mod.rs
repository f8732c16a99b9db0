//! Adam with per-epoch polynomial decay, one volume per step.

mod optim;
mod run;
mod state;

pub use optim::{adam_step, adam_step_named};
pub use run::{
    evaluate, predict, prepare_input, train, write_epochs_csv, write_history_csv, LossKind,
    LossSettings, Split, TrainConfig, Trainer, WeightMode, HISTORY_SCHEMA_VERSION,
};
pub use state::{
    poly_decay_lr, AdamState, BestSnapshot, EpochRecord, Schedule, StepRecord, TrainState,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
};
