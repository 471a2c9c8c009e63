//! Precomputed paragraph-embedding file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "KALMEMBX"
//! version  u32      1
//! d_embed  u32
//! count    u32
//! index    count × { key_len u32, key utf-8 bytes, offset u64 }
//! blocks   one numcore tensor (KALMTNSR ...) per entry, at `offset` from file start
//! ```
//!
//! Entries keyed by `doc_id` hold embeddings of the augmented paragraphs; an
//! optional `doc_id::raw` entry holds embeddings of the unaugmented paragraphs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{KalmError, Result};
use crate::io::write_atomic;
use crate::numcore::{decode_tensor, encode_tensor, Tensor};

pub const INTERCHANGE_MAGIC: &[u8; 8] = b"KALMEMBX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingInterchange {
    dim: usize,
    entries: BTreeMap<String, Tensor>,
}

impl EmbeddingInterchange {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn raw_key(doc_id: &str) -> String {
        format!("{doc_id}::raw")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor) -> Result<()> {
        let key = key.into();
        if t.rank() != 2 || t.cols() != self.dim {
            return Err(KalmError::dim(format!(
                "interchange entry {key} has shape {:?}, expected [n, {}]",
                t.shape(),
                self.dim
            )));
        }
        if self.entries.insert(key.clone(), t).is_some() {
            return Err(KalmError::Input(format!("duplicate interchange key {key}")));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let blocks: Vec<Vec<u8>> = self.entries.values().map(encode_tensor).collect();
        let index_len: usize = self.entries.keys().map(|k| 4 + k.len() + 8).sum();
        let mut offset = (8 + 4 + 4 + 4 + index_len) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(INTERCHANGE_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, block) in self.entries.keys().zip(&blocks) {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += block.len() as u64;
        }
        for b in blocks {
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn decode(bytes: &[u8], what: &str) -> Result<Self> {
        let bad = |msg: String| KalmError::Format {
            path: what.to_string(),
            line: 0,
            msg,
        };
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };
        let u32_at = |pos: &mut usize| -> Result<u32> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let mut pos = 0;
        if take(&mut pos, 8)? != INTERCHANGE_MAGIC {
            return Err(bad("bad interchange magic".into()));
        }
        let version = u32_at(&mut pos)?;
        if version != VERSION {
            return Err(bad(format!("unsupported interchange version {version}")));
        }
        let dim = u32_at(&mut pos)? as usize;
        let count = u32_at(&mut pos)? as usize;
        let mut index = Vec::with_capacity(count);
        for _ in 0..count {
            let klen = u32_at(&mut pos)? as usize;
            let key = std::str::from_utf8(take(&mut pos, klen)?)
                .map_err(|e| bad(format!("non-utf8 key: {e}")))?
                .to_string();
            let off = take(&mut pos, 8)?;
            let off = u64::from_le_bytes(off.try_into().expect("8 bytes")) as usize;
            index.push((key, off));
        }
        let mut file = Self::new(dim);
        for (key, off) in index {
            if off >= bytes.len() {
                return Err(bad(format!("offset of {key} past end of file")));
            }
            let t = decode_tensor(&bytes[off..]).map_err(|e| bad(format!("block {key}: {e}")))?;
            file.insert(key, t)?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(KalmError::MissingPath(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| KalmError::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut f = EmbeddingInterchange::new(2);
        f.insert("doc1", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        f.insert("doc0", Tensor::from_rows(&[[0.5, -0.5]]).unwrap()).unwrap();
        let bytes = f.encode();
        assert_eq!(&bytes[..8], b"KALMEMBX");
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(EmbeddingInterchange::decode(&bytes, "t").unwrap(), f);
    }

    #[test]
    fn duplicate_keys_and_wrong_width_rejected() {
        let mut f = EmbeddingInterchange::new(2);
        f.insert("a", Tensor::zeros(1, 2)).unwrap();
        assert!(f.insert("a", Tensor::zeros(1, 2)).is_err());
        assert!(f.insert("b", Tensor::zeros(1, 3)).is_err());
    }
}
