//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "IVGF" version entry_count
//! repeat entry_count times:
//!     name_len name[name_len] ndim dims[ndim] values[prod(dims)] (f32 LE)
//! ```
//!
//! Values are stored as `f32` and widened to `f64` on load. A stream must
//! end exactly after the last entry.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IVGF";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(params.len(), "entry count")?.to_le_bytes());
    for (name, t) in params.iter() {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_of(t.rank(), "rank")?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Invalid(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Decodes a whole checkpoint; any defect rejects the entire stream.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic: not an IVGF checkpoint"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut store = ParamStore::new();
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 4, "name is not valid UTF-8"))?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("duplicate entry `{name}`")));
        }
        let ndim = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u32("dimension")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= bytes.len())
            .ok_or_else(|| Error::format(at, format!("invalid dims {dims:?} for `{name}`")))?;
        let raw = r.take(n * 4, "values")?;
        let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        store.insert(name, Tensor::new(&dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    super::write_file(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    decode_checkpoint(&super::read_file(path.as_ref())?)
}
