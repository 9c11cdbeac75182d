//! Binary matrix files: magic `IPLE`, little-endian u32 version, rows, dim, then f32 row-major.

use std::path::Path;

use super::EmbeddingTable;
use crate::error::{Error, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"IPLE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + table.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    for v in table.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Decodes a matrix payload. `what` names the source in error messages.
pub fn decode(bytes: &[u8], what: &str) -> Result<EmbeddingTable> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{what}: truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("{what}: bad magic")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let dim = word(12) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("{what}: shape {rows}x{dim} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{what}: header says {rows}x{dim} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingTable::new(rows, dim, data)
}

pub fn read(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, table: &EmbeddingTable) -> Result<()> {
    fsio::write_atomic(path, &encode(table))
}
