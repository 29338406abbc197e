use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::forward::Model;
use super::params::Params;
use crate::error::{HktError, Result};
use crate::gradcore::Tensor;

const MAGIC: &[u8; 4] = b"HKT1";

/// Binary layout, all integers little-endian:
///   magic "HKT1"
///   u32 config length, then the canonical key-sorted config text
///   u32 tensor count
///   per tensor: u32 name length, name bytes, u32 rank, u64 dims,
///               f64 row-major payload (raw bits, so round-trips are
///               bit-exact)
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg_text = model.cfg.canonical_map();
    buf.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HktError::Checkpoint(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Model> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut r = Reader { buf: &raw, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HktError::Checkpoint("bad magic, not a model file".into()));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|e| HktError::Checkpoint(format!("config is not utf-8: {e}")))?;
    let cfg = ModelConfig::from_canonical_map(cfg_text)?;
    let count = r.u32()? as usize;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| HktError::Checkpoint(format!("tensor name not utf-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(HktError::Checkpoint(format!(
                "implausible rank {rank} for {name}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(r.u64()?));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != raw.len() {
        return Err(HktError::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            raw.len() - r.pos
        )));
    }
    Ok(Model { cfg, params })
}
