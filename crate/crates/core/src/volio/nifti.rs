//! Single-file, uncompressed NIfTI-1 subset.
//!
//! Supported: 348-byte header with magic `n+1\0`, either byte order,
//! datatypes uint8/int16/float32, up to three non-singleton dimensions.
//! NIfTI `(i, j, k)` map to `(W, H, D)`.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volio::Volume;

const HEADER_LEN: usize = 348;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            16 => Ok(Self::Float32),
            other => Err(Error::UnsupportedDtype(other.into())),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Float32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub big_endian: bool,
    /// `dim[1..=3]` as `(nx, ny, nz)`.
    pub extents: [usize; 3],
    pub datatype: NiftiDatatype,
    /// `pixdim[1..=3]` in millimetres.
    pub pixdim: [f32; 3],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    /// Intensities after `scl_slope`/`scl_inter` scaling.
    pub volume: Volume,
}

pub fn read_nifti1(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode(&bytes).map_err(|e| e.with_path(path))
}

fn decode(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::Compressed);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let big_endian = match (
        LittleEndian::read_i32(&bytes[0..4]),
        BigEndian::read_i32(&bytes[0..4]),
    ) {
        (348, _) => false,
        (_, 348) => true,
        (other, _) => {
            return Err(Error::Malformed(format!(
                "sizeof_hdr is {other}, expected 348"
            )))
        }
    };
    let header = if big_endian {
        parse_header::<BigEndian>(bytes, true)?
    } else {
        parse_header::<LittleEndian>(bytes, false)?
    };
    let volume = if big_endian {
        read_voxels::<BigEndian>(bytes, &header)?
    } else {
        read_voxels::<LittleEndian>(bytes, &header)?
    };
    Ok(NiftiImage { header, volume })
}

fn parse_header<B: ByteOrder>(h: &[u8], big_endian: bool) -> Result<NiftiHeader> {
    let magic = &h[344..348];
    match magic {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::UnsupportedVariant(
                "detached header/image pair (magic \"ni1\")".into(),
            ))
        }
        other => {
            return Err(Error::BadMagic {
                expected: "n+1\\0".into(),
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    }
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&h[40 + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Malformed(format!("dim[0] = {ndim} outside 1..=7")));
    }
    let ndim = ndim as usize;
    let mut extents = [1usize; 3];
    for axis in 1..=ndim {
        let n = dim[axis];
        if n < 1 {
            return Err(Error::Malformed(format!("dim[{axis}] = {n}")));
        }
        if axis <= 3 {
            extents[axis - 1] = n as usize;
        } else if n != 1 {
            return Err(Error::UnsupportedVariant(format!(
                "{ndim}-dimensional image with dim[{axis}] = {n}"
            )));
        }
    }
    let datatype = NiftiDatatype::from_code(B::read_i16(&h[70..72]))?;
    let pixdim = [1, 2, 3].map(|i| B::read_f32(&h[76 + 4 * i..]).abs());
    for (axis, &p) in pixdim.iter().enumerate().take(ndim.min(3)) {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Malformed(format!("pixdim[{}] = {p}", axis + 1)));
        }
    }
    // Axes beyond `ndim` carry no spacing information.
    let pixdim = [0, 1, 2].map(|i| if i < ndim { pixdim[i] } else { 1.0 });
    let vox_offset = B::read_f32(&h[108..112]);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(Error::Malformed(format!("vox_offset = {vox_offset}")));
    }
    Ok(NiftiHeader {
        big_endian,
        extents,
        datatype,
        pixdim,
        vox_offset: vox_offset as usize,
        scl_slope: B::read_f32(&h[112..116]),
        scl_inter: B::read_f32(&h[116..120]),
    })
}

fn read_voxels<B: ByteOrder>(bytes: &[u8], h: &NiftiHeader) -> Result<Volume> {
    let [nx, ny, nz] = h.extents;
    let n = nx * ny * nz;
    let width = h.datatype.bytes();
    let end = h.vox_offset + n * width;
    if bytes.len() < end {
        return Err(Error::Truncated {
            expected: end as u64,
            found: bytes.len() as u64,
        });
    }
    let raw = &bytes[h.vox_offset..end];
    let mut data: Vec<f32> = match h.datatype {
        NiftiDatatype::Uint8 => raw.iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => raw.chunks_exact(2).map(|c| B::read_i16(c) as f32).collect(),
        NiftiDatatype::Float32 => raw.chunks_exact(4).map(B::read_f32).collect(),
    };
    if h.scl_slope != 0.0 && h.scl_slope.is_finite() {
        for v in &mut data {
            *v = *v * h.scl_slope + h.scl_inter;
        }
    }
    // NIfTI i varies fastest, which is our W axis; (i, j, k) = (W, H, D).
    Volume::new(
        [nz, ny, nx],
        [h.pixdim[2], h.pixdim[1], h.pixdim[0]],
        data,
    )
}
