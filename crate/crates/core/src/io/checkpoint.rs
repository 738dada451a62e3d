//! Versioned binary container for weight stores.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "IDCG" version count
//! count x { name_len name_utf8 rank dims[rank] f32_le[prod(dims)] }
//! crc32(all preceding bytes)
//! ```
//!
//! Entries are written in name order, so equal stores produce equal files.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::WeightStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IDCG";
pub const VERSION: u32 = 1;

pub fn encode(store: &WeightStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * store.count_values(""));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WeightStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated file while reading header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC mismatch: file is corrupted or truncated".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let count = r.u32("entry count")?;
    let mut store = WeightStore::new();
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
        }
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_needed = numel.and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Checkpoint(format!("`{name}` is too large")))?;
        let payload = r.take(bytes_needed, "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        store.insert(name, t);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after last entry", body.len() - r.pos)));
    }
    Ok(store)
}

/// Writes via a temporary sibling and a rename, so a crash never leaves a
/// half-written checkpoint under the final name.
pub fn save(store: &WeightStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, encode(store))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<WeightStore<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Stores a u64 losslessly as four 16-bit halves (each exact in f32).
pub fn u64_to_tensor(v: u64) -> Tensor {
    Tensor::from_fn(&[4], |i| ((v >> (16 * i)) & 0xFFFF) as f32)
}

pub fn tensor_to_u64(t: &Tensor) -> Result<u64> {
    if t.shape() != [4] {
        return Err(Error::Checkpoint(format!("integer entry has shape {:?}", t.shape())));
    }
    t.data().iter().enumerate().try_fold(0u64, |acc, (i, &h)| {
        if !(0.0..=65535.0).contains(&h) || h.fract() != 0.0 {
            return Err(Error::Checkpoint(format!("invalid integer half {h}")));
        }
        Ok(acc | ((h as u64) << (16 * i)))
    })
}
