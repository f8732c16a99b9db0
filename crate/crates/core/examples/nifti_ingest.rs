//! Reads NIfTI-1 files and reports header fields, grid and intensities.
//!
//! ```text
//! cargo run --example nifti_ingest [file.nii ...]
//! ```
//!
//! Without arguments the bundled test files are read.

use std::path::PathBuf;

use canvolve::volio::read_nifti1;

fn main() {
    let mut paths: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if paths.is_empty() {
        let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
        paths = ["float32_2x2x2.nii", "int16_scaled_be.nii", "uint8_labels_offset.nii"]
            .iter()
            .map(|f| data.join(f))
            .collect();
    }
    for path in paths {
        match read_nifti1(&path) {
            Ok(img) => {
                let h = &img.header;
                let v = &img.volume;
                let (lo, hi) = v.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                println!("{}", path.display());
                println!(
                    "  {:?}, {} endian, extents (i,j,k) {:?}, pixdim {:?}, offset {}, scale {}·x + {}",
                    h.datatype,
                    if h.big_endian { "big" } else { "little" },
                    h.extents,
                    h.pixdim,
                    h.vox_offset,
                    h.scl_slope,
                    h.scl_inter
                );
                println!("  grid D×H×W {:?}, spacing {:?} mm, values {lo} .. {hi}", v.dims(), v.spacing());
            }
            Err(e) => println!("{}: {e} (exit code {})", path.display(), e.exit_code()),
        }
    }
}
