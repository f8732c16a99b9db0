//! Largest-component extraction and hole filling on a corrupted phantom
//! segmentation, with metrics before and after.
//!
//! ```text
//! cargo run --release --example postprocess_cleanup
//! ```

use canvolve::metrics::evaluate_case;
use canvolve::postproc::postprocess_labels;
use canvolve::volio::{synth_phantom, LabelMap};

fn main() -> canvolve::Result<()> {
    let (_, truth) = synth_phantom(21, [32, 32, 32], [1.0; 3], 3)?;
    let [_, h, w] = truth.dims();
    let mut corrupted = truth.data().to_vec();
    // Distant false positives for both foreground classes.
    for (class, (z, y, x)) in [(1u8, (1, 1, 1)), (1, (30, 2, 29)), (2, (2, 30, 2))] {
        for dx in 0..2 {
            corrupted[(z * h + y) * w + x + dx] = class;
        }
    }
    // A hole punched in the body.
    let centre = (16 * h + 16) * w + 16;
    if corrupted[centre] == 1 {
        corrupted[centre] = 0;
    }
    let corrupted = LabelMap::new(truth.dims(), truth.spacing(), corrupted, 3)?;
    let cleaned = postprocess_labels(&corrupted, 3);

    for (name, pred) in [("corrupted", &corrupted), ("cleaned", &cleaned)] {
        let m = evaluate_case(pred, &truth, [1.0; 3], 3)?;
        for c in &m.classes {
            println!(
                "{name:<10} class {}: DSC {:.4}  MSD {:.3} mm  HD {:.3} mm",
                c.class,
                c.dsc.unwrap_or(f64::NAN),
                c.msd_mm.unwrap_or(f64::NAN),
                c.hd_mm.unwrap_or(f64::NAN)
            );
        }
    }
    println!("cleaned equals truth: {}", cleaned == truth);
    Ok(())
}
