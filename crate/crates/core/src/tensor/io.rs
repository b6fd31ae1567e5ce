//! Binary containers: `TNSR` for one tensor, `WGTS` for a named collection.
//!
//! `TNSR`: the four magic bytes, four little-endian `u32` dimensions, then the
//! raw little-endian `f32` payload.
//!
//! `WGTS`: the four magic bytes, a little-endian `u32` entry count, then per
//! entry a `u32` name length, the UTF-8 name, and the tensor in `TNSR` form.

use super::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"WGTS";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("reading u32", e))?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 4 * t.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    for d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("writing tensor", e))
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io("reading tensor magic", e))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format("TNSR", format!("bad magic {magic:?}")));
    }
    let mut shape = [0usize; 4];
    for d in &mut shape {
        *d = read_u32(r)? as usize;
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&l| l <= (1 << 31))
        .ok_or_else(|| Error::format("TNSR", format!("implausible shape {shape:?}")))?;
    let mut raw = vec![0u8; len * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::io("reading tensor payload", e))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn tensor_from_bytes(mut bytes: &[u8]) -> Result<Tensor> {
    read_tensor(&mut bytes)
}

pub fn write_archive(w: &mut impl Write, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        write_tensor(&mut buf, t)?;
    }
    w.write_all(&buf).map_err(|e| Error::io("writing weight archive", e))
}

pub fn read_archive(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io("reading archive magic", e))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::format("WGTS", format!("bad magic {magic:?}")));
    }
    let count = read_u32(r)? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 4096 {
            return Err(Error::format("WGTS", format!("entry name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::io("reading entry name", e))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("WGTS", "entry name is not UTF-8"))?;
        entries.push((name, read_tensor(r)?));
    }
    Ok(entries)
}
