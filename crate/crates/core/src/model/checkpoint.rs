//! Binary checkpoint: magic `YVCK`, format version, model configuration, a
//! shape manifest, then the flat parameters as little-endian `f32`.

use std::io::{Read, Write};

use super::{Layout, Model, ModelConfig, ModelError};

const MAGIC: &[u8; 4] = b"YVCK";
const VERSION: u32 = 1;

/// A model restored from disk; parameters carry `f32` precision.
pub type Checkpoint = Model;

pub fn save_checkpoint(model: &Model, mut w: impl Write) -> Result<(), ModelError> {
    let c = &model.cfg;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let u32s = [VERSION as usize, c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq];
    for v in u32s {
        let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint("size overflows u32".into()))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(model.layout.entries.len() as u32).to_le_bytes());
    for e in &model.layout.entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for &p in &model.params {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(mut r: impl Read) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("missing YVCK header".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg = ModelConfig {
        vocab_size: c.u32()?,
        d_model: c.u32()?,
        n_layers: c.u32()?,
        n_heads: c.u32()?,
        d_ff: c.u32()?,
        max_seq: c.u32()?,
        seed: c.u64()?,
    };
    cfg.validate()?;
    let layout = Layout::new(&cfg);
    let n_entries = c.u32()?;
    if n_entries != layout.entries.len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {n_entries} tensors, configuration implies {}",
            layout.entries.len()
        )));
    }
    for e in &layout.entries {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndims = c.u32()?;
        let shape = (0..ndims).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        if name != e.name || shape != e.shape {
            return Err(ModelError::Checkpoint(format!(
                "manifest entry {name} {shape:?} does not match expected {} {:?}",
                e.name, e.shape
            )));
        }
    }
    let count = c.u64()? as usize;
    if count != layout.total {
        return Err(ModelError::Checkpoint(format!(
            "{count} parameters stored, layout needs {}",
            layout.total
        )));
    }
    let body = c.take(4 * count)?;
    if c.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after parameters".into()));
    }
    let params = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    Model::from_params(cfg, params)
}
