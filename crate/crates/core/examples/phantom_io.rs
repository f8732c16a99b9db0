//! Synthetic phantom sets: generation, manifest checksums, VOL3D round
//! trips, normalisation and augmentation.
//!
//! ```text
//! cargo run --release --example phantom_io [out_dir]
//! ```

use canvolve::volio::{
    augment, load_dataset, normalize_zscore, read_volume, write_phantom_set, write_volume,
    AugmentOps, AugmentParams, MANIFEST_FILE,
};

fn main() -> canvolve::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("canvolve_phantoms"));
    let entries = write_phantom_set(&dir, 42, 4, [32, 32, 32], 3)?;
    println!("wrote {} cases to {}", entries.len(), dir.display());
    print!("{}", std::fs::read_to_string(dir.join(MANIFEST_FILE))?);

    let dataset = load_dataset(&dir)?;
    for case in &dataset.cases {
        let counts = case.labels.class_counts();
        let n = case.labels.len() as f64;
        let fractions: Vec<String> = counts.iter().map(|&c| format!("{:.4}", c as f64 / n)).collect();
        println!("{}: class fractions {}", case.id, fractions.join(" "));
    }

    let case = &dataset.cases[0];
    let z = normalize_zscore(&case.volume)?;
    let mean = z.data().iter().map(|&v| v as f64).sum::<f64>() / z.len() as f64;
    println!("normalised mean {mean:.2e}");

    let (moved, moved_labels) = augment(&case.volume, &case.labels, 7, AugmentOps::all_rigid(), &AugmentParams::default())?;
    println!("augmented body voxels: {} → {}", case.labels.class_counts()[1], moved_labels.class_counts()[1]);
    let path = dir.join("augmented_image.vol3d");
    write_volume(&moved, &path)?;
    println!("augmented volume round trip exact: {}", read_volume(&path)? == moved);
    Ok(())
}
