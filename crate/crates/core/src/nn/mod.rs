//! Layer primitives: forward kernels and their tape-recorded forms.

pub mod activation;
pub mod conv;
pub mod graph;
pub mod init;
pub mod norm;

pub use activation::{check_alpha, leaky_relu, softmax_channels, LRELU_ALPHA};
pub use conv::{dilated_conv3d, dilated_kernel_extent, transposed_conv3d, ConvSpec, Initializer};
pub use init::{init_glorot_uniform, init_identity};
pub use norm::{adain, AdaInParams, DEFAULT_EPSILON};

use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Convolution (+bias) → AdaIN → leaky ReLU on plain tensors.
pub fn conv_block<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    adain_params: &AdaInParams,
    alpha: f64,
) -> Result<Tensor<T>> {
    let z = dilated_conv3d(x, spec, weight, bias)?;
    let n = adain(&z, adain_params)?;
    leaky_relu(&n, alpha)
}
