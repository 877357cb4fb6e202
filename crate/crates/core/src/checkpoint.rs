//! Portable model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "MMANCKPT"
//! version      u32       FORMAT_VERSION
//! header_len   u32
//! header       JSON      {"arch": "...", "config": {...}}
//! n_tensors    u32
//! n_tensors times:
//!   name_len   u32
//!   name       UTF-8
//!   frozen     u8        0 or 1
//!   ndim       u32
//!   dims       u64 x ndim
//!   data       f64 x product(dims)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Architecture, Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MMANCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    config: ModelConfig,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        arch: model.arch,
        config: model.config.clone(),
    })?;
    let mut out = Vec::with_capacity(64 + header.len() + 8 * model.store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, p) in model.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.frozen as u8);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?
            .to_string();
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("`{name}`: bad frozen flag {b}"))),
        };
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        tensors.push((name, value, frozen));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Model::from_tensors(header.arch, &header.config, tensors)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
