//! Synthetic segmentation phantoms.
//!
//! Class layout for `K` classes: 0 background, 1 a large body ellipsoid,
//! `2..=K−2` one medium blob each, `K−1` a small blob below 1 % of the
//! voxels. With `K = 3` there is no free medium class, so the medium blob
//! keeps its own intensity but is labelled as body.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volio::{LabelMap, Volume};

pub const MIN_PHANTOM_EXTENT: usize = 16;

/// Upper bound on the small blob's analytic volume, as a voxel fraction.
const SMALL_FRACTION: f64 = 0.008;
const INTENSITY_SCALE: f64 = 100.0;
const NOISE_SD: f64 = 0.3;
const BODY_MEAN: f64 = 1.0;
const MEDIUM_MEAN: f64 = 1.6;
const MEDIUM_STEP: f64 = 0.35;
const SMALL_MEAN: f64 = 2.3;
const PLACEMENT_ATTEMPTS: usize = 200;
/// Medium-blob radius multipliers tried in turn.
const MEDIUM_SCALES: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
/// Free space kept between structures and inside the body wall, in voxels.
const CLEARANCE: f64 = 0.5;

/// Axis-aligned ellipsoid in voxel coordinates `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radii.iter().product::<f64>()
    }

    fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }
}

/// Generating geometry of one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomLayout {
    pub dims: [usize; 3],
    pub classes: usize,
    pub body: Ellipsoid,
    /// Medium blobs with their labels.
    pub medium: Vec<(Ellipsoid, u8)>,
    pub small: Ellipsoid,
}

impl PhantomLayout {
    pub fn draw(rng: &mut ChaCha8Rng, dims: [usize; 3], classes: usize) -> Result<Self> {
        if !(3..=256).contains(&classes) {
            return Err(Error::config(format!(
                "phantoms need 3..=256 classes, got {classes}"
            )));
        }
        if let Some(&n) = dims.iter().find(|&&n| n < MIN_PHANTOM_EXTENT) {
            return Err(Error::config(format!(
                "phantom extent {n} too small to contain the three structures (minimum {MIN_PHANTOM_EXTENT})"
            )));
        }
        let ext = dims.map(|n| n as f64);
        let body = Ellipsoid {
            center: ext.map(|n| n / 2.0 - 0.5 + rng.gen_range(-0.04..0.04) * n),
            radii: ext.map(|n| rng.gen_range(0.32..0.40) * n),
        };
        let min_ext = ext.iter().copied().fold(f64::INFINITY, f64::min);
        let total: f64 = ext.iter().product();
        let small_r_max = (SMALL_FRACTION * total * 3.0 / (4.0 * PI)).cbrt();

        let medium_labels: Vec<u8> = if classes == 3 {
            vec![1]
        } else {
            (2..=classes - 2).map(|k| k as u8).collect()
        };
        let r = rng.gen_range(0.75..0.95) * small_r_max;
        let small = place_inside(rng, &body, [r; 3], &[])?;
        let base: Vec<[f64; 3]> = medium_labels
            .iter()
            .map(|_| {
                let r = rng.gen_range(0.09..0.13) * min_ext;
                [r, r * rng.gen_range(0.8..1.2), r]
            })
            .collect();
        // Near the minimum extent the medium blobs may not fit at full size.
        let mut medium = None;
        for scale in MEDIUM_SCALES {
            let mut placed = vec![small];
            let mut blobs = Vec::new();
            for (radii, &label) in base.iter().zip(&medium_labels) {
                match place_inside(rng, &body, radii.map(|r| r * scale), &placed) {
                    Ok(blob) => {
                        placed.push(blob);
                        blobs.push((blob, label));
                    }
                    Err(_) => break,
                }
            }
            if blobs.len() == base.len() {
                medium = Some(blobs);
                break;
            }
        }
        let medium = medium.ok_or_else(|| {
            Error::config("phantom extents too small to place every structure without overlap")
        })?;
        Ok(Self {
            dims,
            classes,
            body,
            medium,
            small,
        })
    }

    /// Class label at voxel centre `(z, y, x)`.
    pub fn label_at(&self, p: [f64; 3]) -> u8 {
        if self.small.contains(p) {
            return (self.classes - 1) as u8;
        }
        if let Some((_, label)) = self.medium.iter().find(|(e, _)| e.contains(p)) {
            return *label;
        }
        if self.body.contains(p) {
            1
        } else {
            0
        }
    }

    /// Mean intensity (before bias and noise) at `p`.
    fn mean_at(&self, p: [f64; 3]) -> f64 {
        if self.small.contains(p) {
            return SMALL_MEAN;
        }
        if let Some(i) = self.medium.iter().position(|(e, _)| e.contains(p)) {
            return MEDIUM_MEAN + MEDIUM_STEP * i as f64;
        }
        if self.body.contains(p) {
            BODY_MEAN
        } else {
            0.0
        }
    }
}

/// Random blob fully inside `body`, clear of every blob in `avoid`.
fn place_inside(
    rng: &mut ChaCha8Rng,
    body: &Ellipsoid,
    radii: [f64; 3],
    avoid: &[Ellipsoid],
) -> Result<Ellipsoid> {
    let r = radii.iter().copied().fold(0.0, f64::max);
    for _ in 0..PLACEMENT_ATTEMPTS {
        // Shrink the body by the blob radius plus clearance so the blob fits.
        let inner = body.radii.map(|b| b - r - CLEARANCE);
        if inner.iter().any(|&b| b <= 0.0) {
            break;
        }
        let u: [f64; 3] = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        if u.iter().map(|v| v * v).sum::<f64>() > 1.0 {
            continue;
        }
        let center = [0, 1, 2].map(|a| body.center[a] + u[a] * inner[a]);
        let candidate = Ellipsoid { center, radii };
        let clear = avoid.iter().all(|o| {
            let d2: f64 = (0..3).map(|a| (o.center[a] - center[a]).powi(2)).sum();
            d2.sqrt() > o.max_radius() + r + CLEARANCE
        });
        if clear {
            return Ok(candidate);
        }
    }
    Err(Error::config(
        "phantom extents too small to place every structure without overlap",
    ))
}

/// Deterministic phantom volume and its exact label map.
pub fn synth_phantom(
    seed: u64,
    dims: [usize; 3],
    spacing: [f32; 3],
    classes: usize,
) -> Result<(Volume, LabelMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = PhantomLayout::draw(&mut rng, dims, classes)?;

    // Smooth multiplicative bias field: a linear ramp plus one cosine.
    let dir: [f64; 3] = {
        let v = [0; 3].map(|_| rng.gen_range(-1.0..1.0f64));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.map(|x| x / n)
    };
    let ramp = rng.gen_range(0.08..0.18);
    let wave = rng.gen_range(0.02..0.06);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, NOISE_SD).expect("positive sd");

    let [d, h, w] = dims;
    let mut data = Vec::with_capacity(d * h * w);
    let mut labels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64, y as f64, x as f64];
                let rel = [0, 1, 2].map(|a| 2.0 * p[a] / (dims[a] as f64 - 1.0) - 1.0);
                let along: f64 = (0..3).map(|a| dir[a] * rel[a]).sum();
                let bias = 1.0 + ramp * along + wave * (PI * rel[0] + phase).cos();
                let v = layout.mean_at(p) * bias + noise.sample(&mut rng);
                data.push((v * INTENSITY_SCALE) as f32);
                labels.push(layout.label_at(p));
            }
        }
    }
    let volume = Volume::new(dims, spacing, data)?;
    let labels = LabelMap::new(dims, spacing, labels, classes)?;
    Ok((volume, labels))
}
