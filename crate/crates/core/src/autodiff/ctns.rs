//! "CTNS" tensor dump: `CTNS`, u32 version (1), u32 rank, rank x u64 dims,
//! then the f32 payload, everything little-endian and row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTNS";
pub const VERSION: u32 = 1;

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "CTNS",
        detail: detail.into(),
    }
}

pub fn encode<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * tensor.rank() + 4 * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(bad("truncated buffer"));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| bad("dimension overflow"))?);
    }
    let numel: usize = dims.iter().product();
    let payload = take(numel * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !cursor.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Tensor::new(dims, data)
}

pub fn write_to(tensor: &Tensor<f32>, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&encode(tensor))
}

pub fn read_from(mut r: impl Read) -> Result<Tensor<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&buf)
}

pub fn save(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
