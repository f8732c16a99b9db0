//! Sectioned `key: value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! [model]
//! num_classes: 3
//! cam_dilations: 2, 4, 8, 1
//! [loss]
//! kind: dsf
//! [train]
//! epochs: 30
//! [data]
//! dir: phantoms/
//! ```
//!
//! Every key except `data.dir` has a default. Unknown sections or keys are
//! errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::{LossKind, TrainConfig, WeightMode};

/// Arithmetic precision of training and inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
    pub data_dir: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid configuration: ")));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["model", "loss", "train", "data"].contains(&name) {
                    return Err(at(Error::config(format!("unknown section [{name}]"))));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once(':') else {
                return Err(at(Error::config(format!("expected `key: value`, got {line:?}"))));
            };
            let Some(sec) = section.as_deref() else {
                return Err(at(Error::config(format!("key {key:?} outside any section"))));
            };
            cfg.set(sec, key.trim(), value.trim()).map_err(at)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
        Self::parse(&text).map_err(|e| e.with_path(path))
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match k {
            "model.num_classes" => m.num_classes = parse_value(k, value)?,
            "model.base_channels" => m.base_channels = parse_value(k, value)?,
            "model.cam_channels" => m.cam_channels = parse_value(k, value)?,
            "model.latent_channels" => m.latent_channels = parse_value(k, value)?,
            "model.downsample_stages" => m.downsample_stages = parse_value(k, value)?,
            "model.cam_dilations" => m.cam_dilations = parse_list(k, value)?,
            "model.lrelu_alpha" => m.lrelu_alpha = parse_value(k, value)?,
            "loss.kind" => t.loss.kind = value.parse::<LossKind>()?,
            "loss.gamma" => t.loss.gamma = parse_value(k, value)?,
            "loss.lambda_fl" => t.loss.lambda_fl = parse_value(k, value)?,
            "loss.weights" => {
                t.loss.weights = match value {
                    "inverse_frequency" => WeightMode::InverseFrequency,
                    "uniform" => WeightMode::Uniform,
                    list => WeightMode::Explicit(parse_list(k, list)?),
                }
            }
            "train.epochs" => t.epochs = parse_value(k, value)?,
            "train.initial_lr" => t.initial_lr = parse_value(k, value)?,
            "train.seed" => t.seed = parse_value(k, value)?,
            "train.val_fraction" => t.val_fraction = parse_value(k, value)?,
            "train.folds" => t.folds = parse_value(k, value)?,
            "train.precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => return Err(Error::config(format!("{k}: expected f32 or f64, got {other:?}"))),
                }
            }
            "data.dir" => self.data_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown key {key:?} in [{section}]"))),
        }
        Ok(())
    }

    /// Canonical text of the effective configuration; parses back to `self`.
    pub fn render(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "num_classes: {}", m.num_classes);
        let _ = writeln!(s, "base_channels: {}", m.base_channels);
        let _ = writeln!(s, "cam_channels: {}", m.cam_channels);
        let _ = writeln!(s, "latent_channels: {}", m.latent_channels);
        let _ = writeln!(s, "downsample_stages: {}", m.downsample_stages);
        let _ = writeln!(s, "cam_dilations: {}", join(&m.cam_dilations));
        let _ = writeln!(s, "lrelu_alpha: {}", m.lrelu_alpha);
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "kind: {}", t.loss.kind);
        let _ = writeln!(s, "gamma: {}", t.loss.gamma);
        let _ = writeln!(s, "lambda_fl: {}", t.loss.lambda_fl);
        let weights = match &t.loss.weights {
            WeightMode::InverseFrequency => "inverse_frequency".to_string(),
            WeightMode::Uniform => "uniform".to_string(),
            WeightMode::Explicit(w) => join(w),
        };
        let _ = writeln!(s, "weights: {weights}");
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs: {}", t.epochs);
        let _ = writeln!(s, "initial_lr: {}", t.initial_lr);
        let _ = writeln!(s, "seed: {}", t.seed);
        let _ = writeln!(s, "val_fraction: {}", t.val_fraction);
        let _ = writeln!(s, "folds: {}", t.folds);
        let _ = writeln!(s, "precision: {}", self.precision.as_str());
        if let Some(dir) = &self.data_dir {
            let _ = writeln!(s, "\n[data]");
            let _ = writeln!(s, "dir: {}", dir.display());
        }
        s
    }
}
