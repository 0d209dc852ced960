//! `PFPW` weight blob: a flat list of named little-endian f32 tensors.
//!
//! ```text
//! magic "PFPW" | version u32 | tensor_count u32
//! per tensor: name_len u32 | name utf-8 | dtype u8 (0 = f32) | rank u8 |
//!             dims u32 * rank | payload f32 * prod(dims)
//! ```
//! All integers little-endian. Nothing may follow the last tensor.

use crate::error::{Error, Result};
use crate::model::WeightStore;
use crate::tensor::Tensor;

pub const BLOB_MAGIC: [u8; 4] = *b"PFPW";
pub const BLOB_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Encode tensors in name order.
pub fn encode_blob(tensors: &WeightStore) -> Vec<u8> {
    let payload: usize = tensors.values().map(|t| t.len() * 4 + 64).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
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
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Decode a blob, rejecting bad magic, truncation and trailing bytes.
pub fn decode_blob(bytes: &[u8]) -> Result<WeightStore> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4, "magic") {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(Error::BadMagic(m));
        }
    };
    if magic != BLOB_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != BLOB_VERSION {
        return Err(Error::UnsupportedBlob(format!("version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = WeightStore::new();
    for k in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::UnsupportedBlob(format!("tensor {k}: name is not utf-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedBlob(format!(
                "`{name}`: dtype code {dtype}"
            )));
        }
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::UnsupportedBlob(format!("`{name}`: dims {dims:?} overflow")))?;
        let payload = r.take(len, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data)
            .map_err(|e| Error::UnsupportedBlob(format!("`{name}`: {e}")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::UnsupportedBlob(format!("duplicate tensor `{name}`")));
        }
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(Error::TrailingBytes(rest));
    }
    Ok(out)
}
