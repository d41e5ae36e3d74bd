//! Binary checkpoint format.
//!
//! ```text
//! "ACDC" | u32 version | 32-byte config digest
//! repeated until EOF:
//!   u32 name_len | name | u32 rank | u32 extent * rank | f32 value * numel
//! ```
//! All integers and floats are little-endian. Parameters come first, then
//! any batch-norm moments that have been populated.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::model::AcdcModel;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACDC";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_record<T: Scalar>(w: &mut impl Write, name: &str, t: &Tensor<T>) -> Result<()> {
    put_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    put_u32(w, t.rank() as u32)?;
    for &d in t.shape() {
        put_u32(w, d as u32)?;
    }
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(model: &AcdcModel<T>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    w.write_all(&model.config().digest())?;
    for p in model.store().params() {
        put_record(w, &p.name, &p.tensor)?;
    }
    for b in model.store().buffers().iter().filter(|b| b.initialized) {
        put_record(w, &b.name, &b.tensor)?;
    }
    Ok(())
}

pub fn save<T: Scalar>(model: &AcdcModel<T>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut out)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parse a checkpoint for `config`. The stored digest must match.
pub fn read_checkpoint<T: Scalar>(config: ModelConfig, r: &mut impl Read) -> Result<AcdcModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if c.take(32, "config digest")? != config.digest() {
        return Err(Error::DigestMismatch);
    }
    let mut model: AcdcModel<T> = AcdcModel::new(config, 0)?;
    let mut seen = vec![false; model.store().len()];
    while !c.done() {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4, "values")?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        let tensor = Tensor::new(&shape, data)?;
        let store = model.store_mut();
        let slot = if store.contains(&name) {
            let id = store.id(&name)?;
            seen[id.index()] = true;
            &mut store.get_mut(id).tensor
        } else if let Ok(b) = store.buffer_mut(&name) {
            b.initialized = true;
            &mut b.tensor
        } else {
            return Err(Error::Checkpoint(format!("unknown record `{name}`")));
        };
        if slot.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, expected {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let name = &model.store().params()[missing].name;
        return Err(Error::Checkpoint(format!("missing parameter `{name}`")));
    }
    Ok(model)
}

pub fn load<T: Scalar>(config: ModelConfig, path: &Path) -> Result<AcdcModel<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(config, &mut f)
}
