//! Dice, mean surface distance and Hausdorff distance between two offset
//! spheres on an anisotropic grid, checked against brute force.
//!
//! ```text
//! cargo run --release --example surface_metrics
//! ```

use std::time::Instant;

use canvolve::metrics::{
    dice_score, extract_surface, hausdorff, msd, nearest_distances, nearest_distances_brute_force,
    BinaryMask,
};

fn sphere(dims: [usize; 3], center: [f64; 3], radius_mm: f64, spacing: [f64; 3]) -> BinaryMask {
    BinaryMask::from_fn(dims, |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        (0..3).map(|a| ((p[a] - center[a]) * spacing[a]).powi(2)).sum::<f64>() <= radius_mm * radius_mm
    })
}

fn main() -> canvolve::Result<()> {
    let dims = [40, 64, 64];
    let spacing = [2.0, 0.8, 0.8];
    let a = sphere(dims, [20.0, 32.0, 32.0], 18.0, spacing);
    let b = sphere(dims, [21.0, 34.0, 31.0], 17.0, spacing);
    let (p, q) = (extract_surface(&a, spacing)?, extract_surface(&b, spacing)?);
    println!("surface points: {} and {}", p.len(), q.len());
    println!("DSC {:.4}", dice_score(&a, &b)?);
    println!("MSD {:.4} mm", msd(&p, &q)?);
    println!("HD  {:.4} mm", hausdorff(&p, &q)?);

    let start = Instant::now();
    let fast = nearest_distances(&p, &q)?;
    let t_fast = start.elapsed();
    let start = Instant::now();
    let slow = nearest_distances_brute_force(&p, &q)?;
    let t_slow = start.elapsed();
    println!(
        "grid index {:.2?} vs brute force {:.2?}; identical: {}",
        t_fast,
        t_slow,
        fast == slow
    );
    Ok(())
}
