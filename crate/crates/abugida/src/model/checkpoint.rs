//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"ABSR"                      magic
//! u32   format version (1)
//! u64   config text length, then that many bytes of flat `key = value` config
//! u32   source vocabulary size
//! u32   target vocabulary size
//! u32   tensor count
//! per tensor:
//!   u32   name length, then the name bytes
//!   u32   rank, then one u32 per dimension
//!   f32   values, row-major
//! ```
//!
//! Values are stored exactly as the f32 parameter storage holds them, so a
//! save/load round trip is bit-identical. Any truncation or trailing bytes
//! is an error; a load never silently pads or ignores data.

use std::path::Path;

use thiserror::Error;

use super::transformer::{init_model, Model, ModelError};
use super::{ConfigError, ModelConfig};

const MAGIC: &[u8; 4] = b"ABSR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("incompatible checkpoint: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_text = model.cfg.to_flat();
    out.extend_from_slice(&(cfg_text.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg_text.as_bytes());
    out.extend_from_slice(&(model.src_vocab as u32).to_le_bytes());
    out.extend_from_slice(&(model.tgt_vocab as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_tensors() as u32).to_le_bytes());
    for i in 0..model.num_tensors() {
        let t = model.tensor(i);
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.w32() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::CorruptFile(format!(
                "unexpected end of file at byte {}",
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    let data = std::fs::read(path)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::VersionMismatch("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let cfg_len = r.u64()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| CheckpointError::CorruptFile("config is not utf-8".into()))?;
    let cfg = ModelConfig::from_flat(cfg_text)?;
    let src_vocab = r.u32()? as usize;
    let tgt_vocab = r.u32()? as usize;
    let mut model = init_model(&cfg, src_vocab, tgt_vocab)?;
    let count = r.u32()? as usize;
    if count != model.num_tensors() {
        return Err(CheckpointError::CorruptFile(format!(
            "{} tensors, expected {}",
            count,
            model.num_tensors()
        )));
    }
    for i in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::CorruptFile("absurd tensor name length".into()));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::CorruptFile("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::CorruptFile("absurd tensor rank".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        {
            let expect = model.tensor(i);
            if expect.name != name || expect.dims != dims {
                return Err(CheckpointError::CorruptFile(format!(
                    "tensor {i} is {name} {dims:?}, expected {} {:?}",
                    expect.name, expect.dims
                )));
            }
        }
        let n = dims.iter().product::<usize>();
        let raw = r.take(n * 4)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.tensor_mut(i).fill_from_f32(&vals);
    }
    if r.pos != data.len() {
        return Err(CheckpointError::CorruptFile(format!(
            "{} trailing bytes",
            data.len() - r.pos
        )));
    }
    Ok(model)
}

/// Load plus a guard that the checkpoint was built for the vocabularies the
/// caller is about to use.
pub fn load_checkpoint_expecting(
    path: &Path,
    src_vocab: usize,
    tgt_vocab: usize,
) -> Result<Model, CheckpointError> {
    let model = load_checkpoint(path)?;
    if model.src_vocab != src_vocab || model.tgt_vocab != tgt_vocab {
        return Err(CheckpointError::VersionMismatch(format!(
            "vocabulary sizes {}/{} do not match expected {}/{}",
            model.src_vocab, model.tgt_vocab, src_vocab, tgt_vocab
        )));
    }
    Ok(model)
}
