//! VOL3D container: a 32-byte little-endian header followed by raw voxels.
//!
//! ```text
//! "VOL3"  u16 version  u8 dtype (0 = f32, 1 = u8 labels)  u8 reserved
//! u32 D, H, W   f32 spacing D, H, W   payload (W fastest)
//! ```

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::volio::{LabelMap, Volume};

pub const VOL3D_MAGIC: &[u8; 4] = b"VOL3";
pub const VOL3D_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum VolFile {
    Volume(Volume),
    Labels(LabelMap),
}

fn header(dtype: u8, dims: [usize; 3], spacing: [f32; 3]) -> Result<Vec<u8>> {
    let mut w = Vec::with_capacity(HEADER_LEN);
    w.extend_from_slice(VOL3D_MAGIC);
    w.write_u16::<LittleEndian>(VOL3D_VERSION)?;
    w.write_u8(dtype)?;
    w.write_u8(0)?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("extent {d} exceeds u32")))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    for s in spacing {
        w.write_f32::<LittleEndian>(s)?;
    }
    Ok(w)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).with_path(path))
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = header(DTYPE_F32, volume.dims(), volume.spacing())?;
    bytes.reserve(volume.len() * 4);
    for &v in volume.data() {
        bytes.write_f32::<LittleEndian>(v)?;
    }
    write_file(path.as_ref(), &bytes)
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = header(DTYPE_U8, labels.dims(), labels.spacing())?;
    bytes.extend_from_slice(labels.data());
    write_file(path.as_ref(), &bytes)
}

pub fn read_vol3d(path: impl AsRef<Path>) -> Result<VolFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode(&bytes).map_err(|e| e.with_path(path))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match read_vol3d(path)? {
        VolFile::Volume(v) => Ok(v),
        VolFile::Labels(_) => Err(Error::Malformed(
            "expected an f32 intensity volume, found a label map".into(),
        )
        .with_path(path)),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    match read_vol3d(path)? {
        VolFile::Labels(l) => Ok(l),
        VolFile::Volume(_) => Err(Error::Malformed(
            "expected a u8 label map, found an intensity volume".into(),
        )
        .with_path(path)),
    }
}

fn decode(bytes: &[u8]) -> Result<VolFile> {
    if bytes.len() < 4 || &bytes[..4] != VOL3D_MAGIC {
        return Err(Error::BadMagic {
            expected: "VOL3".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = LittleEndian::read_u16(&bytes[4..6]);
    if version != VOL3D_VERSION {
        return Err(Error::UnsupportedVersion(version.into()));
    }
    let dtype = bytes[6];
    let dims = [0, 1, 2].map(|i| LittleEndian::read_u32(&bytes[8 + 4 * i..]) as usize);
    let spacing = [0, 1, 2].map(|i| LittleEndian::read_f32(&bytes[20 + 4 * i..]));
    let voxels = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Malformed(format!("extents {dims:?} overflow")))?;
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        other => return Err(Error::UnsupportedDtype(other.into())),
    };
    let expected = voxels
        .checked_mul(width)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed(format!("extents {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        DTYPE_F32 => {
            let mut data = vec![0f32; voxels];
            LittleEndian::read_f32_into(payload, &mut data);
            VolFile::Volume(Volume::new(dims, spacing, data)?)
        }
        _ => VolFile::Labels(LabelMap::inferred(dims, spacing, payload.to_vec())?),
    })
}
