//! The compact context-aggregation network.
//!
//! Topology for one down-sampling stage:
//!
//! ```text
//! ConvB1 ─┬─ ConvB2-down ─ CAM-d2 ─ CAM-d4 ─ CAM-d8 ─ ConvB4-latent ─ DeconvB ─┐
//!         └──────────────────────── Shortcut (1×1×1) ──────────────────────── + ─ SegHead ─ softmax
//! ```
//!
//! The shortcut reads the pre-activation (AdaIN) output of ConvB1 and is
//! added to the deconvolution block output. With two stages the latent
//! block also strides by two and a second deconvolution/shortcut pair
//! restores the intermediate resolution.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;

use sha2::{Digest, Sha256};

use crate::autodiff::{ops, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::graph::{self, BlockVars};
use crate::nn::{
    dilated_kernel_extent, init_glorot_uniform, init_identity, ConvSpec, Initializer,
    DEFAULT_EPSILON,
};
use crate::seed::derive_seed;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of classes including background.
    pub num_classes: usize,
    pub base_channels: usize,
    pub cam_channels: usize,
    pub latent_channels: usize,
    /// 1 or 2.
    pub downsample_stages: usize,
    /// Dilations of the context-aggregation blocks; the last entry is the
    /// latent block.
    pub cam_dilations: Vec<usize>,
    pub lrelu_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::pelvis()
    }
}

impl ModelConfig {
    /// Six-class pelvis configuration (170,340 parameters).
    pub fn pelvis() -> Self {
        Self {
            num_classes: 6,
            base_channels: 8,
            cam_channels: 36,
            latent_channels: 48,
            downsample_stages: 1,
            cam_dilations: vec![2, 4, 8, 1],
            lrelu_alpha: crate::nn::LRELU_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::config(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("cam_channels", self.cam_channels),
            ("latent_channels", self.latent_channels),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(1..=2).contains(&self.downsample_stages) {
            return Err(Error::config(format!(
                "downsample_stages must be 1 or 2, got {}",
                self.downsample_stages
            )));
        }
        if self.cam_dilations.is_empty() {
            return Err(Error::config("cam_dilations must not be empty"));
        }
        if self.cam_dilations.contains(&0) {
            return Err(Error::config("dilations must be at least 1"));
        }
        crate::nn::check_alpha(self.lrelu_alpha)?;
        Ok(())
    }

    /// Every spatial extent must be a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << self.downsample_stages
    }

    /// SHA-256 over a canonical rendering of every field.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = format!(
            "classes={};base={};cam={};latent={};stages={};dilations={:?};alpha={:016x}",
            self.num_classes,
            self.base_channels,
            self.cam_channels,
            self.latent_channels,
            self.downsample_stages,
            self.cam_dilations,
            self.lrelu_alpha.to_bits()
        );
        Sha256::digest(canonical.as_bytes()).into()
    }

    /// The layer ledger in parameter order.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let glorot = Initializer::GlorotUniform;
        let (base, cam, latent) = (self.base_channels, self.cam_channels, self.latent_channels);
        let two_stage = self.downsample_stages == 2;
        let mut layers = vec![
            LayerSpec::new("ConvB1", LayerRole::Standard, ConvSpec::same(1, base, 3, 1, 1, glorot)?),
            LayerSpec::new(
                "ConvB2-down",
                LayerRole::Standard,
                ConvSpec::same(base, cam, 3, 2, 1, glorot)?,
            ),
        ];
        let (latent_dilation, context) = self.cam_dilations.split_last().expect("validated");
        for (i, &d) in context.iter().enumerate() {
            let mut name = format!("CAM-d{d}");
            if layers.iter().any(|l| l.name == name) {
                name = format!("CAM{}-d{d}", i + 1);
            }
            let spec = ConvSpec::same(cam, cam, 3, 1, d, Initializer::Identity)?;
            layers.push(LayerSpec::new(&name, LayerRole::Cam, spec));
        }
        // The identity kernel is only defined for square channel maps.
        let latent_init = if cam == latent { Initializer::Identity } else { glorot };
        let latent_stride = if two_stage { 2 } else { 1 };
        layers.push(LayerSpec::new(
            "ConvB4-latent",
            LayerRole::Cam,
            ConvSpec::same(cam, latent, 3, latent_stride, *latent_dilation, latent_init)?,
        ));
        if two_stage {
            layers.push(LayerSpec::new(
                "DeconvB2",
                LayerRole::Deconv,
                ConvSpec::same(latent, cam, 3, 2, 1, glorot)?,
            ));
            layers.push(LayerSpec::new(
                "Shortcut2",
                LayerRole::Shortcut,
                ConvSpec::same(cam, cam, 1, 1, 1, glorot)?,
            ));
        }
        let deconv_in = if two_stage { cam } else { latent };
        layers.push(LayerSpec::new(
            "DeconvB",
            LayerRole::Deconv,
            ConvSpec::same(deconv_in, base, 3, 2, 1, glorot)?,
        ));
        layers.push(LayerSpec::new(
            "Shortcut",
            LayerRole::Shortcut,
            ConvSpec::same(base, base, 1, 1, 1, glorot)?,
        ));
        layers.push(LayerSpec::new(
            "SegHead",
            LayerRole::SegHead,
            ConvSpec::same(base, self.num_classes, 1, 1, 1, glorot)?,
        ));
        Ok(layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Standard,
    Cam,
    Deconv,
    Shortcut,
    SegHead,
}

impl LayerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerRole::Standard => "standard",
            LayerRole::Cam => "cam",
            LayerRole::Deconv => "deconv",
            LayerRole::Shortcut => "shortcut",
            LayerRole::SegHead => "seghead",
        }
    }

    /// Shortcut and segmentation layers are bare convolutions.
    pub fn has_adain(self) -> bool {
        !matches!(self, LayerRole::Shortcut | LayerRole::SegHead)
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub role: LayerRole,
    pub conv: ConvSpec,
}

impl LayerSpec {
    fn new(name: &str, role: LayerRole, conv: ConvSpec) -> Self {
        Self {
            name: name.to_string(),
            role,
            conv,
        }
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        if self.role == LayerRole::Deconv {
            self.conv.transposed_weight_shape()
        } else {
            self.conv.weight_shape()
        }
    }

    pub fn adain_count(&self) -> usize {
        if self.role.has_adain() {
            2
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.adain_count()
    }
}

/// One layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Real> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// AdaIN `(a, b)`, each of shape `[1]`.
    pub adain: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Layer<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.weight, &self.bias];
        if let Some((a, b)) = &self.adain {
            out.push(a);
            out.push(b);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.weight, &mut self.bias];
        if let Some((a, b)) = &mut self.adain {
            out.push(a);
            out.push(b);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Real> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
}

/// Tape handles produced by [`Network::forward_on_tape`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub probabilities: Var,
    /// Output of every layer in ledger order (post-activation for blocks).
    pub layer_outputs: Vec<Var>,
}

impl<T: Real> Network<T> {
    /// Builds the network with seeded initial weights and zero biases.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let specs = config.layers()?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let shape = spec.weight_shape();
            let weight = match spec.conv.init {
                Initializer::Identity => init_identity(&shape)?,
                Initializer::GlorotUniform => init_glorot_uniform(&shape, derive_seed(seed, i as u64))?,
            };
            let bias = Tensor::zeros(&[spec.conv.out_channels]);
            let adain = spec
                .role
                .has_adain()
                .then(|| (Tensor::ones(&[1]), Tensor::zeros(&[1])));
            layers.push(Layer {
                spec,
                weight,
                bias,
                adain,
            });
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.iter().find(|l| l.spec.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.layers.iter_mut().find(|l| l.spec.name == name)
    }

    /// Parameter tensor names, e.g. `ConvB1.weight`, in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in &self.layers {
            names.push(format!("{}.weight", l.spec.name));
            names.push(format!("{}.bias", l.spec.name));
            if l.adain.is_some() {
                names.push(format!("{}.adain_a", l.spec.name));
                names.push(format!("{}.adain_b", l.spec.name));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    /// Replaces every parameter tensor; shapes must match.
    pub fn set_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let names = self.param_names();
        let mut slots = self.params_mut();
        if values.len() != slots.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for ((slot, value), name) in slots.iter().zip(&values).zip(&names) {
            if slot.shape() != value.shape() {
                return Err(Error::shape(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
        }
        for (slot, value) in slots.iter_mut().zip(values) {
            **slot = value;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Checks a `1×1×D×H×W` input against the divisibility contract.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[1, 1, d, h, w] = shape else {
            return Err(Error::shape(format!(
                "network input must be 1×1×D×H×W, got {shape:?}"
            )));
        };
        let div = self.config.divisor();
        if [d, h, w].iter().any(|&n| n == 0 || n % div != 0) {
            return Err(Error::shape(format!(
                "input extents {:?} must be positive multiples of {div}",
                [d, h, w]
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` using `params` (one handle per
    /// parameter tensor, in [`Network::param_names`] order).
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<ForwardVars> {
        self.check_input(tape.try_value(input)?.shape())?;
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} parameter handles, got {}",
                params.len()
            )));
        }
        let eps = DEFAULT_EPSILON;
        let alpha = self.config.lrelu_alpha;
        let mut cursor = 0;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input;
        // Pending skip inputs, innermost last.
        let mut skips: Vec<Var> = Vec::new();
        let two_stage = self.config.downsample_stages == 2;
        let mut logits = None;

        for (li, layer) in self.layers.iter().enumerate() {
            let spec = &layer.spec;
            let w = params[cursor];
            let b = params[cursor + 1];
            cursor += 2;
            match spec.role {
                LayerRole::Standard | LayerRole::Cam | LayerRole::Deconv => {
                    let vars = BlockVars {
                        weight: w,
                        bias: b,
                        adain_a: params[cursor],
                        adain_b: params[cursor + 1],
                    };
                    cursor += 2;
                    if spec.name == "ConvB4-latent" && two_stage {
                        // The block before the second down-sampling feeds Shortcut2.
                        skips.push(*pre_activations.last().expect("latent block is never first"));
                    }
                    let out = graph::conv_block(
                        tape,
                        x,
                        &vars,
                        &spec.conv,
                        eps,
                        alpha,
                        spec.role == LayerRole::Deconv,
                    )?;
                    if li == 0 {
                        skips.insert(0, out.pre_activation);
                    }
                    pre_activations.push(out.pre_activation);
                    x = out.output;
                    outputs.push(x);
                }
                LayerRole::Shortcut => {
                    let skip = skips.pop().ok_or_else(|| {
                        Error::config(format!("{}: no skip connection available", spec.name))
                    })?;
                    let s = graph::dilated_conv3d(tape, skip, w, b, &spec.conv)?;
                    x = ops::add(tape, x, s)?;
                    pre_activations.push(x);
                    outputs.push(x);
                }
                LayerRole::SegHead => {
                    let z = graph::dilated_conv3d(tape, x, w, b, &spec.conv)?;
                    logits = Some(z);
                    pre_activations.push(z);
                    outputs.push(z);
                    x = z;
                }
            }
        }
        let logits = logits.ok_or_else(|| Error::config("network has no segmentation head"))?;
        let probabilities = graph::softmax_channels(tape, logits)?;
        Ok(ForwardVars {
            logits,
            probabilities,
            layer_outputs: outputs,
        })
    }

    /// Class probabilities `1×K×D×H×W` for a `1×1×D×H×W` volume.
    pub fn forward(&self, volume: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(volume.clone());
        let params = self.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, input, &params)?;
        Ok(tape.value(out.probabilities).clone())
    }

    /// Every layer's output for `volume`, in ledger order.
    pub fn forward_trace(&self, volume: &Tensor<T>) -> Result<Vec<(String, Tensor<T>)>> {
        let mut tape = Tape::new();
        let input = tape.constant(volume.clone());
        let params = self.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, input, &params)?;
        Ok(self
            .layers
            .iter()
            .zip(out.layer_outputs)
            .map(|(l, v)| (l.spec.name.clone(), tape.value(v).clone()))
            .collect())
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    adain: l.adain.as_ref().map(|(a, b)| (a.cast(), b.cast())),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub role: LayerRole,
    pub weights: usize,
    pub biases: usize,
    pub adain: usize,
}

impl LayerCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.adain
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterAudit {
    pub layers: Vec<LayerCount>,
}

impl ParameterAudit {
    pub fn total(&self) -> usize {
        self.layers.iter().map(LayerCount::total).sum()
    }

    pub fn adain_total(&self) -> usize {
        self.layers.iter().map(|l| l.adain).sum()
    }
}

/// Per-layer parameter ledger of `config`.
pub fn count_parameters(config: &ModelConfig) -> Result<ParameterAudit> {
    let layers = config
        .layers()?
        .into_iter()
        .map(|l| {
            let c = &l.conv;
            LayerCount {
                weights: c.in_channels * c.out_channels * c.taps(),
                biases: c.out_channels,
                adain: l.adain_count(),
                role: l.role,
                name: l.name,
            }
        })
        .collect();
    Ok(ParameterAudit { layers })
}

/// One row of the receptive-field accumulation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfStep {
    pub layer: String,
    pub dilated_extent: usize,
    pub stride: usize,
    /// Input-voxel spacing between adjacent outputs after this layer.
    pub jump: usize,
    pub receptive_field: usize,
}

/// Receptive-field accumulation along the encoder path (up to the latent
/// block): `rf ← rf + (û − 1)·jump`, `jump ← jump·stride`.
pub fn receptive_field_table(config: &ModelConfig) -> Result<Vec<RfStep>> {
    let mut rf = 1;
    let mut jump = 1;
    let mut rows = Vec::new();
    for l in config.layers()? {
        if !matches!(l.role, LayerRole::Standard | LayerRole::Cam) {
            break;
        }
        let extent = dilated_kernel_extent(l.conv.kernel, l.conv.dilation);
        rf += (extent - 1) * jump;
        jump *= l.conv.stride;
        rows.push(RfStep {
            layer: l.name,
            dilated_extent: extent,
            stride: l.conv.stride,
            jump,
            receptive_field: rf,
        });
    }
    Ok(rows)
}

/// Receptive field (voxels per axis) at the context-module output.
pub fn receptive_field(config: &ModelConfig) -> Result<usize> {
    Ok(receptive_field_table(config)?
        .last()
        .map_or(1, |r| r.receptive_field))
}
