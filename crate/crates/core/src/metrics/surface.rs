//! Boundary point sets and surface distances.

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Boundary voxel centres of one mask, in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
    /// Free-form tag naming the mask the points came from.
    pub source: String,
}

impl SurfacePointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self {
            points,
            source: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Foreground voxels with at least one background 6-neighbour, the volume
/// border counting as background, scaled by `spacing`.
pub fn extract_surface(mask: &BinaryMask, spacing: [f64; 3]) -> Result<SurfacePointSet> {
    let [d, h, w] = mask.dims();
    let fg = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && mask.get(z as usize, y as usize, x as usize)
    };
    let mut points = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(z, y, x) {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let interior = fg(zi - 1, yi, xi)
                    && fg(zi + 1, yi, xi)
                    && fg(zi, yi - 1, xi)
                    && fg(zi, yi + 1, xi)
                    && fg(zi, yi, xi - 1)
                    && fg(zi, yi, xi + 1);
                if !interior {
                    points.push([
                        z as f64 * spacing[0],
                        y as f64 * spacing[1],
                        x as f64 * spacing[2],
                    ]);
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(SurfacePointSet::new(points))
}

#[inline]
pub fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (dz, dy, dx) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dz * dz + dy * dy + dx * dx).sqrt()
}

/// Uniform-grid bucket index over a point set for nearest-point queries.
///
/// Returned distances are the same `euclidean` values a full scan would
/// minimise over, so results match brute force bit for bit.
#[derive(Clone, Debug)]
pub struct SurfaceIndex<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    cells: [usize; 3],
    /// Start offsets into `order`, one per cell plus a sentinel.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SurfaceIndex<'a> {
    pub fn new(set: &'a SurfacePointSet) -> Result<Self> {
        let points = &set.points[..];
        if points.is_empty() {
            return Err(Error::EmptySurface);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().clamp(1.0, 64.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let cells = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
        let key = |p: &[f64; 3]| {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell).floor() as usize).min(cells[a] - 1));
            (c[0] * cells[1] + c[1]) * cells[2] + c[2]
        };
        let total = cells.iter().product::<usize>();
        let mut starts = vec![0usize; total + 1];
        for p in points {
            starts[key(p) + 1] += 1;
        }
        for i in 0..total {
            starts[i + 1] += starts[i];
        }
        let mut fill = starts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, p) in points.iter().enumerate() {
            let k = key(p);
            order[fill[k]] = i;
            fill[k] += 1;
        }
        Ok(Self {
            points,
            origin: lo,
            cell,
            cells,
            starts,
            order,
        })
    }

    /// Distance from `p` to the nearest indexed point.
    pub fn nearest(&self, p: [f64; 3]) -> f64 {
        let c = [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64);
        let n = self.cells.map(|v| v as i64);
        // Rings beyond this cannot touch the grid.
        let max_ring = (0..3)
            .map(|a| c[a].max(n[a] - 1 - c[a]).max(c[a] - (n[a] - 1)).max(-c[a]))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=max_ring {
            // Unvisited points lie at least (r - 1) cells away along some
            // axis; the slack absorbs rounding in the cell assignment.
            if best < (r - 1) as f64 * self.cell * (1.0 - 1e-9) {
                break;
            }
            let lo = [0, 1, 2].map(|a| (c[a] - r).max(0));
            let hi = [0, 1, 2].map(|a| (c[a] + r).min(n[a] - 1));
            for z in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    let mut visit = |x: i64| {
                        let cell = ((z * n[1] + y) * n[2] + x) as usize;
                        for &i in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                            best = best.min(euclidean(p, self.points[i]));
                        }
                    };
                    if (z - c[0]).abs() == r || (y - c[1]).abs() == r {
                        (lo[2]..=hi[2]).for_each(&mut visit);
                    } else {
                        for x in [c[2] - r, c[2] + r] {
                            if (lo[2]..=hi[2]).contains(&x) {
                                visit(x);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// `d(p, Q)` for every `p` in `from`, using a spatial index over `to`.
pub fn nearest_distances(from: &SurfacePointSet, to: &SurfacePointSet) -> Result<Vec<f64>> {
    if from.is_empty() {
        return Err(Error::EmptySurface);
    }
    let index = SurfaceIndex::new(to)?;
    Ok(from.points.iter().map(|&p| index.nearest(p)).collect())
}

/// Quadratic reference for [`nearest_distances`].
pub fn nearest_distances_brute_force(
    from: &SurfacePointSet,
    to: &SurfacePointSet,
) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(from
        .points
        .iter()
        .map(|&p| {
            to.points
                .iter()
                .map(|&q| euclidean(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Mean surface distance: the average of all directed nearest distances.
pub fn msd(p: &SurfacePointSet, q: &SurfacePointSet) -> Result<f64> {
    let a = nearest_distances(p, q)?;
    let b = nearest_distances(q, p)?;
    Ok((a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64)
}

/// Hausdorff distance: the largest directed nearest distance.
pub fn hausdorff(p: &SurfacePointSet, q: &SurfacePointSet) -> Result<f64> {
    let a = nearest_distances(p, q)?;
    let b = nearest_distances(q, p)?;
    Ok(a.iter().chain(&b).copied().fold(0.0, f64::max))
}
