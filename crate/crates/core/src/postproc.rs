//! Connected-component cleanup of predicted label maps: keep the largest
//! foreground component per class and fill enclosed holes.

use std::collections::VecDeque;

use crate::metrics::BinaryMask;
use crate::volio::LabelMap;

/// Voxel adjacency used for foreground components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let before = (dz, dy, dx) < (0, 0, 0);
                    let adjacent = match self {
                        Self::Six => manhattan == 1,
                        Self::TwentySix => manhattan > 0,
                    };
                    if before && adjacent {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Component ids per voxel (0 = background, `1..=n` dense) and sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledComponents {
    pub dims: [usize; 3],
    pub ids: Vec<u32>,
    /// `sizes[i]` is the voxel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl LabeledComponents {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Id of the biggest component, ties to the smallest id.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, i as u32 + 1));
            }
        }
        best.map(|(_, id)| id)
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let up = parent[parent[i as usize] as usize];
        parent[i as usize] = up;
        i = up;
    }
    i
}

/// Two-pass union-find labelling. Ids are numbered by each component's
/// first voxel in scan order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabeledComponents {
    let dims = mask.dims();
    let [d, h, w] = dims.map(|v| v as i64);
    let offsets = connectivity.backward_offsets();
    let n = mask.len();
    let mut provisional = vec![u32::MAX; n];
    let mut parent: Vec<u32> = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = ((z * h + y) * w + x) as usize;
                if !mask.data()[i] {
                    continue;
                }
                let mut root: Option<u32> = None;
                for [dz, dy, dx] in &offsets {
                    let (nz, ny, nx) = (z + dz, y + dy, x + dx);
                    if nz < 0 || ny < 0 || nx < 0 || ny >= h || nx >= w {
                        continue;
                    }
                    let label = provisional[((nz * h + ny) * w + nx) as usize];
                    if label == u32::MAX {
                        continue;
                    }
                    let r = find(&mut parent, label);
                    root = Some(match root {
                        None => r,
                        Some(q) if q == r => q,
                        Some(q) => {
                            let (lo, hi) = (q.min(r), q.max(r));
                            parent[hi as usize] = lo;
                            lo
                        }
                    });
                }
                provisional[i] = root.unwrap_or_else(|| {
                    parent.push(parent.len() as u32);
                    parent.len() as u32 - 1
                });
            }
        }
    }
    // Roots are always the smallest provisional label of their set, so
    // renumbering in order of first appearance follows scan order.
    let mut dense = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    let mut ids = vec![0u32; n];
    for i in 0..n {
        if provisional[i] == u32::MAX {
            continue;
        }
        let r = find(&mut parent, provisional[i]) as usize;
        if dense[r] == 0 {
            sizes.push(0);
            dense[r] = sizes.len() as u32;
        }
        ids[i] = dense[r];
        sizes[dense[r] as usize - 1] += 1;
    }
    LabeledComponents { dims, ids, sizes }
}

/// Result of [`keep_largest`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kept {
    pub mask: BinaryMask,
    /// Set when the input had no foreground and was returned unchanged.
    pub empty_input: bool,
}

/// Keeps only the biggest component; ties go to the component whose first
/// voxel comes earliest in scan order.
pub fn keep_largest(mask: &BinaryMask, connectivity: Connectivity) -> Kept {
    let cc = connected_components(mask, connectivity);
    let Some(id) = cc.largest() else {
        return Kept {
            mask: mask.clone(),
            empty_input: true,
        };
    };
    let data = cc.ids.iter().map(|&c| c == id).collect();
    Kept {
        mask: BinaryMask::new(mask.dims(), data).expect("same grid"),
        empty_input: false,
    }
}

/// Sets every background voxel that is not 6-connected to the volume
/// border through background.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let [d, h, w] = mask.dims();
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut outside = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let border = z == 0 || y == 0 || x == 0 || z == d - 1 || y == h - 1 || x == w - 1;
                let i = idx(z, y, x);
                if border && !mask.data()[i] {
                    outside[i] = true;
                    queue.push_back((z, y, x));
                }
            }
        }
    }
    while let Some((z, y, x)) = queue.pop_front() {
        let neighbours = [
            (z.wrapping_sub(1), y, x),
            (z + 1, y, x),
            (z, y.wrapping_sub(1), x),
            (z, y + 1, x),
            (z, y, x.wrapping_sub(1)),
            (z, y, x + 1),
        ];
        for (nz, ny, nx) in neighbours {
            if nz >= d || ny >= h || nx >= w {
                continue;
            }
            let i = idx(nz, ny, nx);
            if !mask.data()[i] && !outside[i] {
                outside[i] = true;
                queue.push_back((nz, ny, nx));
            }
        }
    }
    BinaryMask::new(mask.dims(), outside.into_iter().map(|o| !o).collect()).expect("same grid")
}

/// One cleanup pass: per foreground class in ascending order, largest
/// 26-connected component then hole filling; later classes overwrite.
fn postprocess_pass(pred: &LabelMap, classes: usize) -> LabelMap {
    let mut out = vec![0u8; pred.len()];
    for k in 1..classes.min(256) {
        let k = k as u8;
        let kept = keep_largest(&BinaryMask::from_labels(pred, k), Connectivity::TwentySix);
        if kept.empty_input {
            continue;
        }
        for (o, &f) in out.iter_mut().zip(fill_holes(&kept.mask).data()) {
            if f {
                *o = k;
            }
        }
    }
    LabelMap::new(pred.dims(), pred.spacing(), out, pred.classes()).expect("same grid")
}

/// Upper bound on cleanup passes; see [`postprocess_labels`].
pub const MAX_POSTPROCESS_PASSES: usize = 16;

/// Largest-component extraction and hole filling for every foreground
/// class.
///
/// A later class can split an earlier one when it overwrites part of it,
/// so the pass is repeated until the labels stop changing (at most
/// [`MAX_POSTPROCESS_PASSES`] times). The result is then a fixed point.
pub fn postprocess_labels(pred: &LabelMap, classes: usize) -> LabelMap {
    let mut current = postprocess_pass(pred, classes);
    for _ in 1..MAX_POSTPROCESS_PASSES {
        let next = postprocess_pass(&current, classes);
        if next == current {
            break;
        }
        current = next;
    }
    current
}
