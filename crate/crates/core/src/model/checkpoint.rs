//! Binary checkpoint format.
//!
//! ```text
//! "AVSM" | version u8 | config block | n_params u32 |
//!   per parameter: ndim u8, ndim × u32 dims, row-major f32 values
//! ```
//! All integers and floats are little-endian. The config block is
//! `channels, frames, height, width, audio_len, fusion_dim` as u32, the
//! fusion mode as u8 and the reversal coefficient as f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FusionMode, ModelConfig, SaliencyModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVSM";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint(model: &SaliencyModel<f32>) -> Vec<u8> {
    let cfg = model.config();
    let mut buf = Vec::with_capacity(64 + 4 * model.params().numel());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    for v in [cfg.channels, cfg.frames, cfg.height, cfg.width, cfg.audio_len, cfg.fusion_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(cfg.fusion.code());
    buf.extend_from_slice(&cfg.grl_lambda.to_le_bytes());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        let shape = p.value.shape();
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Codec(format!(
                "checkpoint truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SaliencyModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Codec("bad checkpoint magic (expected AVSM)".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Codec(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let fusion = FusionMode::from_code(r.u8()?)?;
    let grl_lambda = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let config = ModelConfig {
        channels: dims[0],
        frames: dims[1],
        height: dims[2],
        width: dims[3],
        audio_len: dims[4],
        fusion_dim: dims[5],
        fusion,
        grl_lambda,
    };
    let mut model = SaliencyModel::<f32>::new(config, 0)?;
    let n = r.u32()?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::new(shape, data).map_err(|e| Error::Codec(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Codec(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    model.params_mut().replace_values(values)?;
    Ok(model)
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(model: &SaliencyModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SaliencyModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
