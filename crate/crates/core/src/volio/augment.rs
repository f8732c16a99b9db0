//! Spatial augmentation applied identically to a volume and its labels.
//!
//! Every transform is an inverse map: output voxel `p` samples the input at
//! `A·(p − c) + c − t (+ elastic displacement)`, where `c` is the grid
//! centre. Volumes are sampled trilinearly, labels by nearest neighbour;
//! samples outside the grid read 0 (background).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volio::{LabelMap, Volume};

/// Which random transforms [`augment`] composes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentOps {
    pub shift: bool,
    pub rotation: bool,
    pub affine: bool,
    pub elastic: bool,
}

impl AugmentOps {
    pub fn all_rigid() -> Self {
        Self {
            shift: true,
            rotation: true,
            affine: true,
            elastic: false,
        }
    }
}

/// Magnitudes of the random transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Shift drawn uniformly in `±max_shift` voxels per axis.
    pub max_shift: f64,
    /// Rotation about one random axis, uniformly in `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Per-axis scale in `1 ± max_scale`.
    pub max_scale: f64,
    /// Off-diagonal shear in `±max_shear`.
    pub max_shear: f64,
    /// Peak elastic displacement in voxels.
    pub elastic_magnitude: f64,
    /// Control points per axis of the elastic displacement grid.
    pub elastic_grid: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_shift: 5.0,
            max_rotation_deg: 10.0,
            max_scale: 0.1,
            max_shear: 0.05,
            elastic_magnitude: 2.0,
            elastic_grid: 4,
        }
    }
}

/// Coarse displacement grid `[g, g, g, 3]`, upsampled trilinearly.
#[derive(Clone, Debug, PartialEq)]
struct Displacement {
    grid: usize,
    values: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub matrix: [[f64; 3]; 3],
    /// Content moves by `+shift` voxels.
    pub shift: [f64; 3],
    elastic: Option<Displacement>,
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `(cos, sin)` of `degrees`, exact for multiples of 90°.
fn cos_sin(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = degrees.to_radians();
        (r.cos(), r.sin())
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            matrix: IDENTITY,
            shift: [0.0; 3],
            elastic: None,
        }
    }

    pub fn shift(by: [f64; 3]) -> Self {
        Self {
            shift: by,
            ..Self::identity()
        }
    }

    /// Rotation by `degrees` in the plane orthogonal to `axis` (0 = D, 1 = H, 2 = W).
    pub fn rotation(axis: usize, degrees: f64) -> Result<Self> {
        if axis > 2 {
            return Err(Error::config(format!("rotation axis {axis} not in 0..3")));
        }
        let (c, s) = cos_sin(degrees);
        let (i, j) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut m = IDENTITY;
        m[i][i] = c;
        m[i][j] = -s;
        m[j][i] = s;
        m[j][j] = c;
        Ok(Self {
            matrix: m,
            ..Self::identity()
        })
    }

    pub fn affine(matrix: [[f64; 3]; 3], shift: [f64; 3]) -> Self {
        Self {
            matrix,
            shift,
            elastic: None,
        }
    }

    /// `self` after `other`: the matrix product, shifts added.
    pub fn then(&self, other: &Transform) -> Transform {
        Transform {
            matrix: matmul(&self.matrix, &other.matrix),
            shift: [0, 1, 2].map(|a| self.shift[a] + other.shift[a]),
            elastic: self.elastic.clone().or_else(|| other.elastic.clone()),
        }
    }

    fn source(&self, p: [usize; 3], dims: [usize; 3]) -> [f64; 3] {
        let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let rel = [0, 1, 2].map(|a| p[a] as f64 - c[a]);
        let mut q = [0.0; 3];
        for a in 0..3 {
            q[a] = (0..3).map(|k| self.matrix[a][k] * rel[k]).sum::<f64>() + c[a] - self.shift[a];
        }
        if let Some(field) = &self.elastic {
            let d = field.sample(p, dims);
            for a in 0..3 {
                q[a] += d[a];
            }
        }
        q
    }

    pub fn apply_volume(&self, volume: &Volume) -> Volume {
        let dims = volume.dims();
        let [d, h, w] = dims;
        let mut out = Vec::with_capacity(volume.len());
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    out.push(trilinear(volume, self.source([z, y, x], dims)));
                }
            }
        }
        Volume::new(dims, volume.spacing(), out).expect("same grid")
    }

    pub fn apply_labels(&self, labels: &LabelMap) -> LabelMap {
        let dims = labels.dims();
        let [d, h, w] = dims;
        let mut out = Vec::with_capacity(labels.len());
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let q = self.source([z, y, x], dims);
                    let r = q.map(|v| v.round());
                    let inside = (0..3).all(|a| r[a] >= 0.0 && r[a] < dims[a] as f64);
                    out.push(if inside {
                        labels.get(r[0] as usize, r[1] as usize, r[2] as usize)
                    } else {
                        0
                    });
                }
            }
        }
        LabelMap::new(dims, labels.spacing(), out, labels.classes()).expect("same grid")
    }
}

impl Displacement {
    fn random(rng: &mut ChaCha8Rng, grid: usize, magnitude: f64) -> Self {
        let grid = grid.max(2);
        let values = (0..grid.pow(3))
            .map(|_| [0; 3].map(|_| rng.gen_range(-magnitude..=magnitude)))
            .collect();
        Self { grid, values }
    }

    fn sample(&self, p: [usize; 3], dims: [usize; 3]) -> [f64; 3] {
        let g = self.grid;
        let pos = [0, 1, 2].map(|a| {
            if dims[a] > 1 {
                p[a] as f64 * (g - 1) as f64 / (dims[a] - 1) as f64
            } else {
                0.0
            }
        });
        let i0 = pos.map(|v| (v.floor() as usize).min(g - 2));
        let f = [0, 1, 2].map(|a| pos[a] - i0[a] as f64);
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let wgt: f64 = (0..3)
                .map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] })
                .product();
            let idx = ((i0[0] + o[0]) * g + i0[1] + o[1]) * g + i0[2] + o[2];
            for a in 0..3 {
                out[a] += wgt * self.values[idx][a];
            }
        }
        out
    }
}

/// Trilinear sample with zero outside the grid.
fn trilinear(v: &Volume, q: [f64; 3]) -> f32 {
    let dims = v.dims();
    let base = q.map(f64::floor);
    let f = [0, 1, 2].map(|a| q[a] - base[a]);
    let mut acc = 0.0f64;
    for corner in 0..8 {
        let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let wgt: f64 = (0..3)
            .map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] })
            .product();
        if wgt == 0.0 {
            continue;
        }
        let idx = [0, 1, 2].map(|a| base[a] + o[a] as f64);
        if (0..3).all(|a| idx[a] >= 0.0 && idx[a] < dims[a] as f64) {
            acc += wgt * v.get(idx[0] as usize, idx[1] as usize, idx[2] as usize) as f64;
        }
    }
    acc as f32
}

/// Draws a random transform from `ops` and applies it to both grids.
pub fn augment(
    volume: &Volume,
    labels: &LabelMap,
    seed: u64,
    ops: AugmentOps,
    params: &AugmentParams,
) -> Result<(Volume, LabelMap)> {
    labels.check_aligned(volume)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Transform::identity();
    if ops.rotation && params.max_rotation_deg > 0.0 {
        let axis = rng.gen_range(0..3);
        let deg = rng.gen_range(-params.max_rotation_deg..=params.max_rotation_deg);
        t = t.then(&Transform::rotation(axis, deg)?);
    }
    if ops.affine {
        let mut m = IDENTITY;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i == j {
                    *v += rng.gen_range(-params.max_scale..=params.max_scale);
                } else {
                    *v += rng.gen_range(-params.max_shear..=params.max_shear);
                }
            }
        }
        t = t.then(&Transform::affine(m, [0.0; 3]));
    }
    if ops.shift {
        let s = [0; 3].map(|_| rng.gen_range(-params.max_shift..=params.max_shift));
        t = t.then(&Transform::shift(s));
    }
    if ops.elastic {
        t.elastic = Some(Displacement::random(
            &mut rng,
            params.elastic_grid,
            params.elastic_magnitude,
        ));
    }
    Ok((t.apply_volume(volume), t.apply_labels(labels)))
}
