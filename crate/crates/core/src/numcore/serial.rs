//! Binary tensor format.
//!
//! Layout (little-endian): 8-byte magic `KALMTNSR`, `u32` rank, `rank × u32`
//! dims, then `product(dims) × f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{KalmError, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"KALMTNSR";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.len());
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

fn bad(what: &str, msg: impl Into<String>) -> KalmError {
    KalmError::Format {
        path: what.to_string(),
        line: 0,
        msg: msg.into(),
    }
}

pub fn read_tensor<R: Read>(r: &mut R, what: &str) -> Result<Tensor> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| bad(what, format!("truncated header: {e}")))?;
    if &magic != TENSOR_MAGIC {
        return Err(bad(what, "bad tensor magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|e| bad(what, format!("truncated rank: {e}")))?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(what, format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut word).map_err(|e| bad(what, format!("truncated dims: {e}")))?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|e| bad(what, format!("truncated payload: {e}")))?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    read_tensor(&mut cursor, "<buffer>")
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    crate::io::write_atomic(path, &encode_tensor(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| KalmError::io(path, e))?;
    let mut cursor = bytes.as_slice();
    read_tensor(&mut cursor, &path.display().to_string())
}
