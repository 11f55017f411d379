//! Binary model checkpoints.
//!
//! ```text
//! b"RFCK"            magic
//! u32                format version (1)
//! u32 + bytes        model spec as JSON
//! u32                number of parameter blocks
//!   u32 + bytes      block name
//!   u32              rank
//!   u64 * rank       dims
//! u64                total value count
//! f64 * total        values
//! ```
//!
//! All integers and reals are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grad::{GradVector, Layout, ParamDesc};
use crate::models::{ModelSpec, ModelState};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RFCK";
pub const VERSION: u32 = 1;

pub fn write_to<S: Scalar>(model: &ModelState<S>, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let spec = serde_json::to_vec(model.spec()).expect("spec serializes");
    out.write_all(&(spec.len() as u32).to_le_bytes())?;
    out.write_all(&spec)?;
    let layout = model.params().layout();
    out.write_all(&(layout.params().len() as u32).to_le_bytes())?;
    for p in layout.params() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    let values = model.params().values();
    out.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        out.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn save<S: Scalar>(model: &ModelState<S>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_to(model, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn read_from<S: Scalar>(input: impl Read) -> Result<ModelState<S>> {
    let mut r = Reader(input);
    if r.bytes(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let spec: ModelSpec = serde_json::from_slice(&r.bytes(n)?).map_err(|e| Error::Checkpoint(format!("spec: {e}")))?;
    let blocks = r.u32()? as usize;
    let mut params = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(n)?).map_err(|_| Error::Checkpoint("block name".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        params.push(ParamDesc { name, shape });
    }
    let layout = Layout::new(params);
    if layout != spec.layout() {
        return Err(Error::Checkpoint("layout does not match spec".into()));
    }
    let total = r.u64()? as usize;
    if total != layout.total() {
        return Err(Error::Checkpoint("value count does not match layout".into()));
    }
    let raw = r.bytes(total * 8)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    ModelState::from_params(spec, GradVector::new(layout, values)?)
}

pub fn load<S: Scalar>(path: &Path) -> Result<ModelState<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_from(bytes.as_slice())
}
