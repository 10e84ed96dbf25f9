//! Binary parameter checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic   b"WSCKPT01"
//! u32     tensor count
//! repeat:
//!   u32   name length, then UTF-8 name bytes
//!   u32   rank, then u64 per dimension
//!   f64   values in row-major order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{Dims, ParamSet, Tensors};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WSCKPT01";

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    let tensors = params.tensors();
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_raw<R: Read>(mut r: R) -> Result<Vec<RawTensor>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push(RawTensor { name, shape, data });
    }
    Ok(out)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ParamSet> {
    let raw = read_raw(r)?;
    let find = |name: &str| {
        raw.iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let w1 = find("theta.encoder.w1")?;
    let cls = find("theta.classifier.weight")?;
    let hid = find("theta.predictor.hidden.weight")?;
    let dim = |t: &RawTensor, i: usize| {
        t.shape
            .get(i)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("{} has rank {}", t.name, t.shape.len())))
    };
    let dims = Dims {
        d: dim(w1, 0)?,
        h: dim(w1, 1)?,
        h1: dim(hid, 1)?,
        n_way: dim(cls, 1)?,
    };
    let mut params = ParamSet::zeros(dims);
    let expected = params.tensors().len();
    if raw.len() != expected {
        return Err(Error::Checkpoint(format!("{} tensors, expected {expected}", raw.len())));
    }
    for (name, mut t) in params.tensors_mut() {
        let src = find(&name)?;
        if src.shape != t.shape() {
            return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", src.shape, t.shape())));
        }
        for (dst, &v) in t.iter_mut().zip(&src.data) {
            *dst = v;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
