//! Volumes, label maps, file formats, normalisation, phantoms and
//! augmentation.
//!
//! Grids are stored `D×H×W` with `W` varying fastest; spacing is in
//! millimetres per axis in the same order.

mod augment;
mod dataset;
mod nifti;
mod phantom;
mod vol3d;

pub use augment::{augment, AugmentOps, AugmentParams, Transform};
pub(crate) use dataset::csv_error;
pub use dataset::{load_dataset, write_phantom_set, Case, Dataset, ManifestEntry, MANIFEST_FILE};
pub use nifti::{read_nifti1, NiftiDatatype, NiftiHeader, NiftiImage};
pub use phantom::{synth_phantom, PhantomLayout, MIN_PHANTOM_EXTENT};
pub use vol3d::{
    read_labels, read_vol3d, read_volume, write_labels, write_volume, VolFile, VOL3D_MAGIC,
    VOL3D_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check_grid(dims: [usize; 3], spacing: [f32; 3], len: usize) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != len {
        return Err(Error::shape(format!(
            "grid {dims:?} holds {n} voxels but {len} were supplied"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::shape(format!("grid extents {dims:?} must be positive")));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::config(format!(
            "voxel spacing {spacing:?} must be positive and finite"
        )));
    }
    Ok(())
}

/// Scalar intensity grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("volume voxel {i}"),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.dims;
        self.data[(z * h + y) * w + x]
    }

    /// `1×1×D×H×W` network input.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let [d, h, w] = self.dims;
        Tensor::new(
            &[1, 1, d, h, w],
            self.data.iter().map(|&v| T::c(v as f64)).collect(),
        )
        .expect("grid length checked at construction")
    }

    /// Interprets integral intensities as class labels.
    pub fn to_labels(&self, classes: Option<usize>) -> Result<LabelMap> {
        let mut labels = Vec::with_capacity(self.data.len());
        for (i, &v) in self.data.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(Error::Malformed(format!(
                    "voxel {i} holds {v}, not a label in 0..=255"
                )));
            }
            labels.push(v as u8);
        }
        let map = LabelMap::inferred(self.dims, self.spacing, labels)?;
        match classes {
            Some(k) => map.with_classes(k),
            None => Ok(map),
        }
    }
}

/// Integer class grid aligned to a [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<u8>,
    classes: usize,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>, classes: usize) -> Result<Self> {
        check_grid(dims, spacing, data.len())?;
        if !(1..=256).contains(&classes) {
            return Err(Error::config(format!("class count {classes} outside 1..=256")));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::shape(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
            classes,
        })
    }

    /// Class count taken as one more than the largest label present.
    pub fn inferred(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> Result<Self> {
        let classes = data.iter().copied().max().map_or(1, |m| m as usize + 1);
        Self::new(dims, spacing, data, classes)
    }

    /// Same grid with a declared class count (must cover every label).
    pub fn with_classes(self, classes: usize) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.data, classes)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        let [_, h, w] = self.dims;
        self.data[(z * h + y) * w + x]
    }

    /// Voxel count per class `0..K`.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }

    /// Checks that `volume` shares this grid.
    pub fn check_aligned(&self, volume: &Volume) -> Result<()> {
        if self.dims != volume.dims || self.spacing != volume.spacing {
            return Err(Error::shape(format!(
                "label grid {:?} @ {:?} mm does not match volume grid {:?} @ {:?} mm",
                self.dims, self.spacing, volume.dims, volume.spacing
            )));
        }
        Ok(())
    }
}

/// Zero-mean, unit-variance intensities (population statistics).
pub fn normalize_zscore(volume: &Volume) -> Result<Volume> {
    let n = volume.data.len() as f64;
    let mean = volume.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = volume
        .data
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let inv_std = 1.0 / var.sqrt();
    Ok(Volume {
        dims: volume.dims,
        spacing: volume.spacing,
        data: volume
            .data
            .iter()
            .map(|&v| ((v as f64 - mean) * inv_std) as f32)
            .collect(),
    })
}
