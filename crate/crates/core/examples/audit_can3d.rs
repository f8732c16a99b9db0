//! Parameter ledger and receptive fields of the network configurations.
//!
//! ```text
//! cargo run --example audit_can3d
//! ```

use canvolve::cli::audit_report;
use canvolve::model::{count_parameters, receptive_field, ModelConfig, Network};
use canvolve::Tensor;

fn main() -> canvolve::Result<()> {
    let pelvis = ModelConfig::pelvis();
    println!("== pelvis configuration ==\n{}", audit_report(&pelvis)?);

    let no_dilation = ModelConfig {
        cam_dilations: vec![1, 1, 1, 1],
        ..ModelConfig::pelvis()
    };
    let two_stage = ModelConfig {
        downsample_stages: 2,
        ..ModelConfig::pelvis()
    };
    let wide_latent = ModelConfig {
        latent_channels: 84,
        ..ModelConfig::pelvis()
    };
    for (name, cfg) in [
        ("all dilations 1", &no_dilation),
        ("two-stage", &two_stage),
        ("latent 84", &wide_latent),
    ] {
        let audit = count_parameters(cfg)?;
        println!(
            "{name:<16} parameters {:>7}  receptive field {}",
            audit.total(),
            receptive_field(cfg)?
        );
    }

    // A fresh network's context blocks act as leaky ReLU on their input.
    let net = Network::<f32>::build(&pelvis, 0)?;
    let x = Tensor::<f32>::from_fn(&[1, 1, 16, 16, 16], |i| ((i * 37 % 101) as f32 - 50.0) / 25.0);
    let trace = net.forward_trace(&x)?;
    for pair in trace.windows(2) {
        let (prev, (name, out)) = (&pair[0].1, &pair[1]);
        if name.starts_with("CAM") {
            let expected = canvolve::nn::leaky_relu(prev, pelvis.lrelu_alpha)?;
            println!("{name}: identity initialised, output = LReLU(input): {}", *out == expected);
        }
    }
    Ok(())
}
