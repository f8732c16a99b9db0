//! Dice, Dice-squared, focal, DSF and cross-entropy losses on phantom
//! labels, plus the hand-checkable disjoint case.
//!
//! ```text
//! cargo run --example loss_family
//! ```

use canvolve::losses::{
    dice_loss, dsf, dsl, evaluate, focal_loss, one_hot, weighted_ce, ClassWeights, LossConfig,
};
use canvolve::volio::synth_phantom;
use canvolve::Tensor;

fn main() -> canvolve::Result<()> {
    // Two binary channels, 8 voxels, disjoint 2-voxel masks.
    let p = Tensor::new(&[1, 1, 1, 1, 8], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let q = Tensor::new(&[1, 1, 1, 1, 8], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])?;
    let w = ClassWeights::uniform(1);
    println!("disjoint case: dice {} dsl {}", evaluate(&p, |t, v| dice_loss(t, v, &q, &w))?, evaluate(&p, |t, v| dsl(t, v, &q, &w))?);

    let (_, labels) = synth_phantom(3, [32, 32, 32], [1.0; 3], 3)?;
    let counts = labels.class_counts();
    let target: Tensor<f64> = one_hot(labels.data(), labels.dims(), 3)?;
    let weights = ClassWeights::inverse_frequency(&counts)?;
    let config = LossConfig::new(weights.clone());
    println!("class counts {counts:?}; inverse-frequency weights {:?}", weights.as_slice());

    // Blend the one-hot target toward uniform: 0 = perfect, 1 = uniform guess.
    println!("\n blend   dice     dsl      focal    dsf      ce       wce");
    for blend in [0.0, 0.1, 0.3, 0.6, 1.0] {
        let probs = target.map(|v| (1.0 - blend) * v + blend / 3.0);
        let uniform = ClassWeights::uniform(3);
        let row = [
            evaluate(&probs, |t, v| dice_loss(t, v, &target, &config.weights))?,
            evaluate(&probs, |t, v| dsl(t, v, &target, &config.weights))?,
            evaluate(&probs, |t, v| focal_loss(t, v, &target, &config.alpha, config.gamma))?,
            evaluate(&probs, |t, v| dsf(t, v, &target, &config))?,
            evaluate(&probs, |t, v| weighted_ce(t, v, &target, &uniform))?,
            evaluate(&probs, |t, v| weighted_ce(t, v, &target, &config.weights))?,
        ];
        println!(
            " {blend:.1}   {}",
            row.iter().map(|v| format!("{v:<8.5}")).collect::<Vec<_>>().join(" ")
        );
    }
    println!("\nuniform guess CE = ln 3 = {:.5}", 3f64.ln());
    Ok(())
}
