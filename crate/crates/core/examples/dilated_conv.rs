//! Dilated 3D convolution: dilation equals a zero-inflated dense kernel,
//! the identity kernel passes input through, and throughput at 32³.
//!
//! ```text
//! cargo run --release --example dilated_conv
//! ```

use std::time::Instant;

use canvolve::nn::{dilated_conv3d, dilated_kernel_extent, init_identity, ConvSpec, Initializer};
use canvolve::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-4..=4) as f64)
}

/// Spreads a 3×3×3 kernel over a (2d+1)³ grid with zeros between taps.
fn inflate(w: &Tensor<f64>, d: usize) -> Tensor<f64> {
    let [o, i] = [w.shape()[0], w.shape()[1]];
    let e = dilated_kernel_extent(3, d);
    let mut out = Tensor::zeros(&[o, i, e, e, e]);
    for oc in 0..o {
        for ic in 0..i {
            for t in 0..27 {
                let (a, b, c) = (t / 9, (t / 3) % 3, t % 3);
                let dst = (((oc * i + ic) * e + a * d) * e + b * d) * e + c * d;
                out.data_mut()[dst] = w.data()[(oc * i + ic) * 27 + t];
            }
        }
    }
    out
}

fn main() -> canvolve::Result<()> {
    canvolve::threads::configure_threads()?;
    let x = random(&[1, 2, 8, 8, 8], 1);
    let w = random(&[3, 2, 3, 3, 3], 2);
    let b = Tensor::zeros(&[3]);
    println!("dilation  extent  max |dilated − inflated|");
    for d in [1, 2, 4, 8] {
        let spec = ConvSpec::same(2, 3, 3, 1, d, Initializer::GlorotUniform)?;
        let dilated = dilated_conv3d(&x, &spec, &w, &b)?;
        let e = dilated_kernel_extent(3, d);
        let dense_spec = ConvSpec::same(2, 3, e, 1, 1, Initializer::GlorotUniform)?;
        let dense = dilated_conv3d(&x, &dense_spec, &inflate(&w, d), &b)?;
        println!("{d:>8}  {e:>6}  {:e}", dilated.max_abs_diff(&dense)?);
    }

    let xi = random(&[1, 4, 8, 8, 8], 3);
    for d in [1, 2, 4, 8] {
        let spec = ConvSpec::same(4, 4, 3, 1, d, Initializer::Identity)?;
        let y = dilated_conv3d(&xi, &spec, &init_identity(&spec.weight_shape())?, &Tensor::zeros(&[4]))?;
        println!("identity kernel, d={d}: output equals input: {}", y == xi);
    }

    let big = random(&[1, 36, 32, 32, 32], 4).cast::<f32>();
    let spec = ConvSpec::same(36, 36, 3, 1, 4, Initializer::GlorotUniform)?;
    let wf = random(&spec.weight_shape(), 5).cast::<f32>();
    let bf = Tensor::zeros(&[36]);
    let start = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        dilated_conv3d(&big, &spec, &wf, &bf)?;
    }
    let secs = start.elapsed().as_secs_f64() / reps as f64;
    let flops = 2.0 * 36.0 * 36.0 * 27.0 * 32f64.powi(3);
    println!("36→36 channels at 32³, d=4: {:.1} ms ({:.2} GFLOP/s)", secs * 1e3, flops / secs / 1e9);
    Ok(())
}
