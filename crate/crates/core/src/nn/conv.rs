//! Dilated 3D convolution and its stride-2 adjoint.
//!
//! Taps follow the convolution convention `out(p) = Σ_{s + d·t = p} in(s)·k(t)`
//! with `t` centred on the kernel, i.e. the kernel is flipped relative to
//! cross-correlation. Kernels are lowered to a column matrix (one row per
//! `(input channel, tap)` pair) and multiplied with the weight matrix.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row blocks handed to one GEMM call are a multiple of this (the f32
/// micro-kernel height).
const GEMM_ROW_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Initializer {
    GlorotUniform,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Cubic kernel extent `u`; odd.
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Zero padding per side.
    pub padding: usize,
    pub init: Initializer,
}

/// Extent of a dilated kernel: `û = u + (u − 1)(d − 1)`.
pub fn dilated_kernel_extent(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation - 1)
}

impl ConvSpec {
    /// Resolution-preserving spec: padding `d(u − 1)/2` per side.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        init: Initializer,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel extent {kernel} must be odd")));
        }
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            padding: dilation.saturating_mul(kernel.saturating_sub(1)) / 2,
            init,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel extent {} must be odd",
                self.kernel
            )));
        }
        if self.dilation < 1 {
            return Err(Error::config("dilation must be at least 1"));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::config(format!(
                "stride {} unsupported (1 or 2)",
                self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn dilated_extent(&self) -> usize {
        dilated_kernel_extent(self.kernel, self.dilation)
    }

    pub fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    /// Weight shape `(out, in, u, u, u)` of the forward convolution.
    pub fn weight_shape(&self) -> [usize; 5] {
        let u = self.kernel;
        [self.out_channels, self.in_channels, u, u, u]
    }

    /// Weight shape `(in, out, u, u, u)` of the transposed convolution.
    pub fn transposed_weight_shape(&self) -> [usize; 5] {
        let u = self.kernel;
        [self.in_channels, self.out_channels, u, u, u]
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.taps() + self.out_channels
    }

    /// Output extents of the forward convolution.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        let span = self.dilation * (self.kernel - 1);
        for axis in 0..3 {
            let n = input[axis];
            if self.stride == 2 && !n.is_multiple_of(2) {
                return Err(Error::shape(format!(
                    "stride-2 convolution needs even extents, got {input:?}"
                )));
            }
            let padded = n + 2 * self.padding;
            if padded < span + 1 {
                return Err(Error::shape(format!(
                    "input extents {input:?} too small for dilated kernel extent {}",
                    span + 1
                )));
            }
            out[axis] = (padded - span - 1) / self.stride + 1;
        }
        Ok(out)
    }
}

/// Index arithmetic shared by the lowering and its adjoint.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    /// Extents of the "wide" side (forward-conv input).
    wide: [usize; 3],
    /// Extents of the "narrow" side (forward-conv output).
    narrow: [usize; 3],
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
}

impl Geometry {
    fn of(spec: &ConvSpec, wide: [usize; 3], narrow: [usize; 3]) -> Self {
        Self {
            wide,
            narrow,
            kernel: spec.kernel,
            stride: spec.stride,
            dilation: spec.dilation,
            padding: spec.padding,
        }
    }

    fn wide_len(&self) -> usize {
        self.wide.iter().product()
    }

    fn narrow_len(&self) -> usize {
        self.narrow.iter().product()
    }

    /// For tap `k` on `axis`: the range of output positions that land inside
    /// the input, and the input offset added to `o·stride`.
    fn tap_range(&self, axis: usize, k: usize) -> (usize, usize, isize) {
        // Flipped tap: kernel index k reads input at o·s − pad + d·(u − 1 − k).
        let off = (self.dilation * (self.kernel - 1 - k)) as isize - self.padding as isize;
        let s = self.stride as isize;
        let n_in = self.wide[axis] as isize;
        let n_out = self.narrow[axis] as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if n_in - off <= 0 {
            0
        } else {
            ((n_in - off + s - 1) / s).min(n_out)
        };
        let lo = lo.min(hi);
        (lo as usize, hi as usize, off)
    }
}

/// Lowers one channel plane of the wide side into `taps` rows of length
/// `narrow_len`. `rows` must be zero-initialised.
fn lower_plane<T: Real>(plane: &[T], rows: &mut [T], g: &Geometry) {
    let u = g.kernel;
    let [_, wh, ww] = g.wide;
    let [_, nh, nw] = g.narrow;
    let p = g.narrow_len();
    for kz in 0..u {
        let (z0, z1, oz_off) = g.tap_range(0, kz);
        for ky in 0..u {
            let (y0, y1, oy_off) = g.tap_range(1, ky);
            for kx in 0..u {
                let (x0, x1, ox_off) = g.tap_range(2, kx);
                let tap = (kz * u + ky) * u + kx;
                let row = &mut rows[tap * p..(tap + 1) * p];
                if x0 >= x1 {
                    continue;
                }
                for oz in z0..z1 {
                    let iz = (oz * g.stride) as isize + oz_off;
                    for oy in y0..y1 {
                        let iy = (oy * g.stride) as isize + oy_off;
                        let src = (iz as usize * wh + iy as usize) * ww;
                        let dst = (oz * nh + oy) * nw;
                        let ix0 = ((x0 * g.stride) as isize + ox_off) as usize;
                        if g.stride == 1 {
                            row[dst + x0..dst + x1]
                                .copy_from_slice(&plane[src + ix0..src + ix0 + (x1 - x0)]);
                        } else {
                            for (j, ox) in (x0..x1).enumerate() {
                                row[dst + ox] = plane[src + ix0 + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`lower_plane`]: scatters `taps` rows back onto a wide plane.
fn raise_plane<T: Real>(rows: &[T], plane: &mut [T], g: &Geometry) {
    let u = g.kernel;
    let [_, wh, ww] = g.wide;
    let [_, nh, nw] = g.narrow;
    let p = g.narrow_len();
    for kz in 0..u {
        let (z0, z1, oz_off) = g.tap_range(0, kz);
        for ky in 0..u {
            let (y0, y1, oy_off) = g.tap_range(1, ky);
            for kx in 0..u {
                let (x0, x1, ox_off) = g.tap_range(2, kx);
                let tap = (kz * u + ky) * u + kx;
                let row = &rows[tap * p..(tap + 1) * p];
                if x0 >= x1 {
                    continue;
                }
                for oz in z0..z1 {
                    let iz = (oz * g.stride) as isize + oz_off;
                    for oy in y0..y1 {
                        let iy = (oy * g.stride) as isize + oy_off;
                        let dst = (iz as usize * wh + iy as usize) * ww;
                        let src = (oz * nh + oy) * nw;
                        let ix0 = ((x0 * g.stride) as isize + ox_off) as usize;
                        if g.stride == 1 {
                            for (d, &s) in plane[dst + ix0..dst + ix0 + (x1 - x0)]
                                .iter_mut()
                                .zip(&row[src + x0..src + x1])
                            {
                                *d += s;
                            }
                        } else {
                            for (j, ox) in (x0..x1).enumerate() {
                                plane[dst + ix0 + j * g.stride] += row[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Column matrix `[channels·taps, narrow_len]` of a `channels`-plane image.
fn lower<T: Real>(image: &[T], channels: usize, g: &Geometry) -> Vec<T> {
    let taps = g.kernel.pow(3);
    let p = g.narrow_len();
    let w = g.wide_len();
    let mut col = vec![T::zero(); channels * taps * p];
    col.par_chunks_mut(taps * p)
        .zip(image.par_chunks(w))
        .for_each(|(rows, plane)| lower_plane(plane, rows, g));
    col
}

/// Scatters a column matrix back onto a `channels`-plane image.
fn raise<T: Real>(col: &[T], channels: usize, g: &Geometry) -> Vec<T> {
    let taps = g.kernel.pow(3);
    let p = g.narrow_len();
    let w = g.wide_len();
    let mut image = vec![T::zero(); channels * w];
    image
        .par_chunks_mut(w)
        .zip(col.par_chunks(taps * p))
        .for_each(|(plane, rows)| raise_plane(rows, plane, g));
    image
}

/// `C[m×n] = A[m×k]·B[k×n]` on strided views, split over row blocks of `C`.
///
/// Each element of `C` is accumulated in the same order whatever the row
/// partition, so the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
fn gemm_rows<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    let threads = rayon::current_num_threads().max(1);
    let rows_per_block = m.div_ceil(threads).next_multiple_of(GEMM_ROW_BLOCK);
    c.par_chunks_mut(rows_per_block * n)
        .enumerate()
        .for_each(|(blk, chunk)| {
            let r0 = blk * rows_per_block;
            let rows = chunk.len() / n;
            T::gemm(rows, k, n, &a[r0 * rsa..], rsa, csa, b, rsb, csb, T::zero(), chunk);
        });
    c
}

/// Adds the transpose of a row-major `rows×cols` block onto `acc` (`cols×rows`).
fn add_transposed<T: Real>(acc: &mut [T], block: &[T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            acc[c * rows + r] += block[r * cols + c];
        }
    }
}

fn check_weight<T: Real>(weight: &Tensor<T>, expected: [usize; 5], what: &str) -> Result<()> {
    if weight.shape() != expected {
        return Err(Error::shape(format!(
            "{what} weight has shape {:?}, expected {:?}",
            weight.shape(),
            expected
        )));
    }
    Ok(())
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(format!(
            "bias has shape {:?}, expected [{channels}]",
            bias.shape()
        )));
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

/// Dilated 3D convolution of an `N×C×D×H×W` tensor.
pub fn dilated_conv3d<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (n, c, dims) = input.volume_dims()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    check_weight(weight, spec.weight_shape(), "convolution")?;
    check_bias(bias, spec.out_channels)?;
    let out_dims = spec.output_dims(dims)?;
    let g = Geometry::of(spec, dims, out_dims);
    let ck = c * spec.taps();
    let p = g.narrow_len();

    let mut data = Vec::with_capacity(n * spec.out_channels * p);
    for sample in input.data().chunks(c * g.wide_len()) {
        let col = lower(sample, c, &g);
        let mut out = gemm_rows(spec.out_channels, ck, p, weight.data(), ck, 1, &col, p, 1);
        add_bias(&mut out, bias.data(), p);
        data.extend_from_slice(&out);
    }
    Tensor::new(&[n, spec.out_channels, out_dims[0], out_dims[1], out_dims[2]], data)
}

/// Transposed (fractionally strided) convolution: the adjoint of the stride-2
/// [`dilated_conv3d`] with the same kernel, plus a bias. Every spatial extent
/// doubles. `weight` has shape `(in, out, u, u, u)`.
pub fn transposed_conv3d<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if spec.stride != 2 {
        return Err(Error::config(format!(
            "transposed convolution supports stride 2 only, got {}",
            spec.stride
        )));
    }
    let (n, c, dims) = input.volume_dims()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "transposed convolution expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    check_weight(weight, spec.transposed_weight_shape(), "transposed convolution")?;
    check_bias(bias, spec.out_channels)?;
    let wide = transposed_output_dims(spec, dims)?;
    let g = Geometry::of(spec, wide, dims);
    let out_c = spec.out_channels;
    let ck = out_c * spec.taps();
    let p = g.narrow_len();

    let mut data = Vec::with_capacity(n * out_c * g.wide_len());
    for sample in input.data().chunks(c * p) {
        // col[ck, p] = Wᵀ · x, with W viewed as [c, ck].
        let col = gemm_rows(ck, c, p, weight.data(), 1, ck, sample, p, 1);
        let mut out = raise(&col, out_c, &g);
        add_bias(&mut out, bias.data(), g.wide_len());
        data.extend_from_slice(&out);
    }
    Tensor::new(&[n, out_c, wide[0], wide[1], wide[2]], data)
}

fn transposed_output_dims(spec: &ConvSpec, narrow: [usize; 3]) -> Result<[usize; 3]> {
    let wide = narrow.map(|e| e * 2);
    // The forward convolution of the wide side must land exactly on `narrow`.
    let back = ConvSpec {
        in_channels: spec.out_channels,
        out_channels: spec.in_channels,
        ..*spec
    }
    .output_dims(wide)?;
    if back != narrow {
        return Err(Error::shape(format!(
            "transposed convolution of {narrow:?} is not the adjoint of a stride-2 convolution"
        )));
    }
    Ok(wide)
}

/// Gradients of a forward convolution.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn dilated_conv3d_backward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (_, c, dims) = input.volume_dims()?;
    let (_, oc, out_dims) = grad_out.volume_dims()?;
    let g = Geometry::of(spec, dims, out_dims);
    let ck = c * spec.taps();
    let p = g.narrow_len();

    let mut gw = vec![T::zero(); oc * ck];
    let mut gb = vec![T::zero(); oc];
    let mut gin = need_input.then(|| Vec::with_capacity(input.len()));
    for (sample, gout) in input
        .data()
        .chunks(c * g.wide_len())
        .zip(grad_out.data().chunks(oc * p))
    {
        let col = lower(sample, c, &g);
        // dWᵀ[ck, oc] = col[ck, p] · goutᵀ
        let dwt = gemm_rows(ck, p, oc, &col, p, 1, gout, 1, p);
        add_transposed(&mut gw, &dwt, ck, oc);
        for (acc, plane) in gb.iter_mut().zip(gout.chunks(p)) {
            *acc += plane.iter().copied().sum::<T>();
        }
        if let Some(gin) = gin.as_mut() {
            // dcol[ck, p] = Wᵀ · gout
            let dcol = gemm_rows(ck, oc, p, weight.data(), 1, ck, gout, p, 1);
            gin.extend_from_slice(&raise(&dcol, c, &g));
        }
    }
    Ok(ConvGrads {
        input: gin.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[oc], gb)?,
    })
}

pub(crate) fn transposed_conv3d_backward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (_, c, narrow) = input.volume_dims()?;
    let (_, oc, wide) = grad_out.volume_dims()?;
    let g = Geometry::of(spec, wide, narrow);
    let ck = oc * spec.taps();
    let p = g.narrow_len();

    let mut gw = vec![T::zero(); c * ck];
    let mut gb = vec![T::zero(); oc];
    let mut gin = need_input.then(|| Vec::with_capacity(input.len()));
    for (x, gout) in input
        .data()
        .chunks(c * p)
        .zip(grad_out.data().chunks(oc * g.wide_len()))
    {
        let col = lower(gout, oc, &g);
        // dWᵀ[ck, c] = col[ck, p] · xᵀ
        let dwt = gemm_rows(ck, p, c, &col, p, 1, x, 1, p);
        add_transposed(&mut gw, &dwt, ck, c);
        for (acc, plane) in gb.iter_mut().zip(gout.chunks(g.wide_len())) {
            *acc += plane.iter().copied().sum::<T>();
        }
        if let Some(gin) = gin.as_mut() {
            // dx[c, p] = W[c, ck] · col
            gin.extend_from_slice(&gemm_rows(c, ck, p, weight.data(), ck, 1, &col, p, 1));
        }
    }
    Ok(ConvGrads {
        input: gin.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[oc], gb)?,
    })
}
