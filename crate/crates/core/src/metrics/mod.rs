//! Overlap and surface-distance evaluation: Dice score, mean surface
//! distance and Hausdorff distance, per class and aggregated over cases.
//!
//! Distances are in millimetres: voxel indices are multiplied by the
//! per-axis spacing before any distance is taken.

mod report;
mod surface;

pub use report::{
    evaluate_case, CaseMetrics, ClassMetrics, ClassSummary, MetricFlag, MetricsReport, Stat,
    METRICS_SCHEMA_VERSION,
};
pub use surface::{
    euclidean, extract_surface, hausdorff, msd, nearest_distances, nearest_distances_brute_force,
    SurfaceIndex, SurfacePointSet,
};

use crate::error::{Error, Result};
use crate::volio::LabelMap;

/// Boolean grid `D×H×W`, `W` fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() || dims.contains(&0) {
            return Err(Error::shape(format!(
                "mask grid {dims:?} does not hold {} voxels",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, data }
    }

    /// Voxels of `labels` equal to `class`.
    pub fn from_labels(labels: &LabelMap, class: u8) -> Self {
        Self {
            dims: labels.dims(),
            data: labels.data().iter().map(|&l| l == class).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, value: bool) {
        let i = self.index(z, y, x);
        self.data[i] = value;
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn check_same_grid(&self, other: &BinaryMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "mask grids differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// `2|A∩B| / (|A| + |B|)`, and 1 when both masks are empty.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_grid(b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&p, &q) in a.data.iter().zip(&b.data) {
        na += p as usize;
        nb += q as usize;
        inter += (p && q) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
