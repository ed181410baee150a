//! AVST tensor files: magic, version, dtype, rank, u32 dims, f32 payload.
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::write_atomic;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"AVST";
pub const TENSOR_VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(DTYPE_F32);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let truncated = || Error::Codec(format!("truncated tensor file ({} bytes)", bytes.len()));
    if bytes.len() < 7 {
        return Err(truncated());
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Codec("bad magic, expected AVST".into()));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(Error::Codec(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::Codec(format!("unsupported dtype {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if ndim == 0 {
        return Err(Error::Codec("rank-0 tensors are not supported".into()));
    }
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated());
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Codec(format!("shape {shape:?} overflows")))?;
    let expected = n.checked_mul(4).and_then(|p| p.checked_add(header));
    match expected {
        Some(e) if e == bytes.len() => {}
        Some(e) if e > bytes.len() => return Err(truncated()),
        _ => return Err(Error::Codec(format!("payload length does not match shape {shape:?}"))),
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Codec(e.to_string()))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::Codec(msg) => Error::Codec(format!("{}: {msg}", path.display())),
        other => other,
    })
}
