//! Finite-difference checks of the tape gradients in 64-bit arithmetic.
//!
//! ```text
//! cargo run --release --example grad_check
//! ```

use canvolve::autodiff::{grad_check, grad_check_seeded, ops, Tape, Var};
use canvolve::losses::{dsf, one_hot, ClassWeights, LossConfig};
use canvolve::model::{ModelConfig, Network};
use canvolve::nn::{graph, ConvSpec, Initializer};
use canvolve::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Projects a tensor to a scalar with fixed random weights.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = random(tape.value(y).shape(), seed, -1.0, 1.0);
    let r = tape.constant(r);
    let prod = ops::mul(tape, y, r)?;
    ops::sum(tape, prod)
}

fn main() -> Result<()> {
    let w = random(&[2, 2, 3, 3, 3], 1, -0.5, 0.5);
    let b = Tensor::zeros(&[2]);
    for d in [1, 2, 4, 8] {
        let spec = ConvSpec::same(2, 2, 3, 1, d, Initializer::GlorotUniform)?;
        let x = random(&[1, 2, 6, 6, 6], 2, -1.0, 1.0);
        let err = grad_check(
            |t, v| {
                let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
                let y = graph::dilated_conv3d(t, v, wv, bv, &spec)?;
                project(t, y, 3)
            },
            &x,
            1e-6,
        )?;
        println!("dilated conv d={d}: max relative error {err:.2e}");
    }

    let labels: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
    let q: Tensor<f64> = one_hot(&labels, [4, 4, 4], 3)?;
    let config = LossConfig::new(ClassWeights::new(vec![0.5, 1.0, 2.0])?);
    let logits = random(&[1, 3, 4, 4, 4], 4, -1.0, 1.0);
    let err = grad_check(
        |t, v| {
            let p = graph::softmax_channels(t, v)?;
            dsf(t, p, &q, &config)
        },
        &logits,
        1e-6,
    )?;
    println!("softmax + DSF loss: max relative error {err:.2e}");

    // End to end through a small two-class network, probing the input.
    let cfg = ModelConfig {
        num_classes: 2,
        base_channels: 2,
        cam_channels: 4,
        latent_channels: 4,
        ..ModelConfig::pelvis()
    };
    let net = Network::<f64>::build(&cfg, 5)?;
    let x = random(&[1, 1, 8, 8, 8], 6, -1.0, 1.0);
    let err = grad_check_seeded(
        |t, v| {
            let params = net.bind(t, false);
            let out = net.forward_on_tape(t, v, &params)?;
            project(t, out.probabilities, 7)
        },
        &x,
        1e-6,
        40,
        8,
    )?;
    println!("network input gradient (40 probes): max relative error {err:.2e}");
    Ok(())
}
