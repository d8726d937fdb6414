//! Binary weights files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    7 bytes
//! count    u32
//! entry*   u16 name length, UTF-8 name, u8 rank, rank x u32 extents, f32 values
//! crc32    u32 over every preceding byte
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 7] = b"TSDLW1\0";

pub fn encode_entries(magic: &[u8; 7], entries: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("file is truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_entries(magic: &[u8; 7], bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < magic.len() + 8 || &bytes[..magic.len()] != magic {
        return Err(Error::Format("bad magic; not a file of the expected kind".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        at: magic.len(),
    };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("entry '{name}': {e}")))?;
        out.push((name, t));
    }
    if r.at != body.len() {
        return Err(Error::Format("trailing bytes after the last entry".into()));
    }
    Ok(out)
}

impl Model {
    pub fn weights_bytes(&self) -> Vec<u8> {
        encode_entries(WEIGHTS_MAGIC, &self.state())
    }

    /// Replaces every parameter and buffer from `bytes`.
    ///
    /// The file must name exactly the model's state tensors with matching
    /// shapes; on any mismatch the model is left unchanged.
    pub fn load_weights_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut entries: HashMap<String, Tensor> = decode_entries(WEIGHTS_MAGIC, bytes)?.into_iter().collect();
        let mut updates = Vec::new();
        for (name, t) in self.state() {
            let src = entries
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("weights file lacks '{name}'")))?;
            if src.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "'{name}' has shape {:?} in the weights file but {:?} in the model",
                    src.shape(),
                    t.shape()
                )));
            }
            updates.push((name, src));
        }
        if let Some(extra) = entries.keys().min() {
            return Err(Error::Format(format!("weights file has unknown entry '{extra}'")));
        }
        let mut updates: HashMap<String, Tensor> = updates.into_iter().collect();
        for (name, t) in self.state_mut() {
            if let Some(src) = updates.remove(&name) {
                *t = src;
            }
        }
        Ok(())
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.weights_bytes())?;
        Ok(())
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.load_weights_bytes(&bytes)
    }
}
