//! Compact context-aggregation network for 3D volumetric segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape;
//! * [`nn`]: dilated convolution, AdaIN, activations and initialisers;
//! * [`model`]: the network itself, its parameter audit and checkpoints;
//! * [`losses`]: Dice, Dice-squared, focal and cross-entropy losses;
//! * [`metrics`] and [`postproc`]: surface-distance evaluation and
//!   connected-component cleanup;
//! * [`volio`]: volume files, normalisation, phantoms and augmentation;
//! * [`trainer`]: Adam with polynomial decay, batch size one;
//! * [`cli`]: the `canvolve` command-line front end.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postproc;
pub mod seed;
pub mod tensor;
pub mod threads;
pub mod volio;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
