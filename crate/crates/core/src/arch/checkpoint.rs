//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "PHYT" | u16 version | u32 config length | config JSON
//! then per parameter, until end of file:
//! u32 name length | name (UTF-8) | u32 rank | u64 × rank dims | f32 × numel
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::Error;

use super::{build_model, Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"PHYT";
pub const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes a model built from a [`ModelConfig`].
pub fn checkpoint_bytes(m: &Model<f32>) -> Result<Vec<u8>> {
    let cfg = m
        .config()
        .ok_or_else(|| bad("only models built from a ModelConfig can be checkpointed"))?;
    let cfg_json = serde_json::to_vec(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    for (spec, t) in m.param_specs().iter().zip(m.params()) {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Rebuilds a model from [`checkpoint_bytes`] output. Every parameter of
/// the configured architecture must be present exactly once, in order.
pub fn model_from_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("missing PHYT magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let cfg: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("config: {e}")))?;
    let mut model = build_model::<f32>(&cfg, 0)?;

    let mut params = Vec::with_capacity(model.params().len());
    for spec in model.param_specs() {
        if r.done() {
            return Err(bad(format!("missing parameter {}", spec.name)));
        }
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?;
        if name != spec.name {
            return Err(bad(format!(
                "expected parameter {}, found {name}",
                spec.name
            )));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != spec.shape {
            return Err(bad(format!(
                "{name}: stored shape {dims:?}, expected {:?}",
                spec.shape
            )));
        }
        let raw = r.take(spec.numel() * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(&dims, values)?.with_grad());
    }
    if !r.done() {
        return Err(bad("trailing bytes after the last parameter"));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn save_checkpoint(m: &Model<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(m)?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    if !path.exists() {
        return Err(Error::PathNotFound(path.to_path_buf()));
    }
    model_from_checkpoint(&std::fs::read(path)?)
}
