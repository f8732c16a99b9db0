//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CAN3DCKPT"  u16 version  [u8; 32] config hash
//! u32 tensor count, then per tensor:
//!     u16 name length, name, u8 rank, u32 dims…, f64 values…
//! u8 has-train-state, then the optional training section
//! ```
//!
//! Values are stored as `f64` whatever the in-memory precision, so `f32`
//! and `f64` networks round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::{Real, Tensor};
use crate::trainer::{AdamState, BestSnapshot, EpochRecord, Schedule, StepRecord, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"CAN3DCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub network: Network<T>,
    pub train_state: Option<TrainState<T>>,
}

pub fn save_checkpoint<T: Real>(
    network: &Network<T>,
    train_state: Option<&TrainState<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(network, train_state)?;
    let mut file = fs::File::create(path).map_err(|e| Error::from(e).with_path(path))?;
    file.write_all(&bytes).map_err(|e| Error::from(e).with_path(path))?;
    Ok(())
}

/// Loads a checkpoint written for `config`; any other configuration is
/// rejected rather than coerced.
pub fn load_checkpoint<T: Real>(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
    decode(config, &bytes).map_err(|e| e.with_path(path))
}

fn encode<T: Real>(network: &Network<T>, state: Option<&TrainState<T>>) -> Result<Vec<u8>> {
    let mut w = Vec::new();
    w.extend_from_slice(CHECKPOINT_MAGIC);
    w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.extend_from_slice(&network.config().hash());
    let names = network.param_names();
    let params = network.params();
    write_tensors(&mut w, names.iter().map(String::as_str).zip(params))?;
    match state {
        None => w.write_u8(0)?,
        Some(s) => {
            w.write_u8(1)?;
            write_state(&mut w, s, &names)?;
        }
    }
    Ok(w)
}

fn write_tensors<'a, T: Real>(
    w: &mut Vec<u8>,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        let name = name.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.extend_from_slice(name);
        w.write_u8(t.ndim() as u8)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in t.data() {
            w.write_f64::<LittleEndian>(v.f64())?;
        }
    }
    Ok(())
}

fn write_state<T: Real>(w: &mut Vec<u8>, s: &TrainState<T>, names: &[String]) -> Result<()> {
    w.write_u64::<LittleEndian>(s.seed)?;
    w.write_f64::<LittleEndian>(s.schedule.initial_lr)?;
    w.write_u64::<LittleEndian>(s.schedule.total_epochs)?;
    w.write_f64::<LittleEndian>(s.schedule.power)?;
    w.write_u64::<LittleEndian>(s.epoch)?;
    w.write_u64::<LittleEndian>(s.step)?;

    let a = &s.adam;
    w.write_f64::<LittleEndian>(a.beta1)?;
    w.write_f64::<LittleEndian>(a.beta2)?;
    w.write_f64::<LittleEndian>(a.epsilon)?;
    w.write_u64::<LittleEndian>(a.t)?;
    let name_refs = || names.iter().map(String::as_str);
    write_tensors(w, name_refs().zip(&a.m))?;
    write_tensors(w, name_refs().zip(&a.v))?;

    w.write_u32::<LittleEndian>(s.history.len() as u32)?;
    for r in &s.history {
        w.write_u64::<LittleEndian>(r.step)?;
        w.write_u64::<LittleEndian>(r.epoch)?;
        w.write_f64::<LittleEndian>(r.lr)?;
        w.write_f64::<LittleEndian>(r.loss)?;
        w.write_f64::<LittleEndian>(r.wall_ms)?;
    }
    w.write_u32::<LittleEndian>(s.epochs.len() as u32)?;
    for r in &s.epochs {
        w.write_u64::<LittleEndian>(r.epoch)?;
        w.write_f64::<LittleEndian>(r.train_loss)?;
        w.write_f64::<LittleEndian>(r.val_loss)?;
        w.write_u32::<LittleEndian>(r.val_dice.len() as u32)?;
        for &d in &r.val_dice {
            w.write_f64::<LittleEndian>(d)?;
        }
    }
    match &s.best {
        None => w.write_u8(0)?,
        Some(b) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(b.epoch)?;
            w.write_f64::<LittleEndian>(b.score)?;
            write_tensors(w, name_refs().zip(&b.params))?;
        }
    }
    Ok(())
}

/// Bounds-checked cursor over the file contents.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    fn tensors<T: Real>(&mut self, expected: &[(String, Vec<usize>)]) -> Result<Vec<Tensor<T>>> {
        let count = self.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Malformed(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        let mut out = Vec::with_capacity(count);
        for (want_name, want_shape) in expected {
            let len = self.u16()? as usize;
            let name = String::from_utf8_lossy(self.take(len)?).into_owned();
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            if &name != want_name || &shape != want_shape {
                return Err(Error::Malformed(format!(
                    "tensor `{name}` {shape:?} where `{want_name}` {want_shape:?} was expected"
                )));
            }
            let n: usize = shape.iter().product();
            let raw = self.take(n * 8)?;
            let data = raw.chunks_exact(8).map(|c| T::c(LittleEndian::read_f64(c))).collect();
            out.push(Tensor::new(&shape, data)?);
        }
        Ok(out)
    }
}

fn decode<T: Real>(config: &ModelConfig, bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        found: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version.into()));
    }
    if r.take(32)? != config.hash() {
        return Err(Error::ConfigMismatch);
    }

    let mut network = Network::<T>::build(config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = network
        .param_names()
        .into_iter()
        .zip(network.params().iter().map(|t| t.shape().to_vec()))
        .collect();
    network.set_params(r.tensors(&expected)?)?;

    let train_state = match r.u8()? {
        0 => None,
        1 => Some(read_state(&mut r, &expected)?),
        flag => return Err(Error::Malformed(format!("train-state flag {flag}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        network,
        train_state,
    })
}

fn read_state<T: Real>(r: &mut Reader<'_>, expected: &[(String, Vec<usize>)]) -> Result<TrainState<T>> {
    let seed = r.u64()?;
    let schedule = Schedule {
        initial_lr: r.f64()?,
        total_epochs: r.u64()?,
        power: r.f64()?,
    };
    let epoch = r.u64()?;
    let step = r.u64()?;
    let (beta1, beta2, epsilon, t) = (r.f64()?, r.f64()?, r.f64()?, r.u64()?);
    let m = r.tensors(expected)?;
    let v = r.tensors(expected)?;

    let n = r.u32()? as usize;
    let mut history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        history.push(StepRecord {
            step: r.u64()?,
            epoch: r.u64()?,
            lr: r.f64()?,
            loss: r.f64()?,
            wall_ms: r.f64()?,
        });
    }
    let n = r.u32()? as usize;
    let mut epochs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let epoch = r.u64()?;
        let train_loss = r.f64()?;
        let val_loss = r.f64()?;
        let k = r.u32()? as usize;
        let val_dice = (0..k).map(|_| r.f64()).collect::<Result<_>>()?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_dice,
        });
    }
    let best = match r.u8()? {
        0 => None,
        1 => Some(BestSnapshot {
            epoch: r.u64()?,
            score: r.f64()?,
            params: r.tensors(expected)?,
        }),
        flag => return Err(Error::Malformed(format!("best-snapshot flag {flag}"))),
    };
    Ok(TrainState {
        seed,
        schedule,
        epoch,
        step,
        adam: AdamState {
            beta1,
            beta2,
            epsilon,
            t,
            m,
            v,
        },
        history,
        epochs,
        best,
    })
}
