//! FEAT descriptor files.
//!
//! Layout: the 4 magic bytes `FEAT`, a little-endian `u32` row count, a
//! little-endian `u32` dimension, then `count * dim` little-endian `f32`
//! values in row-major order. Nothing may follow the payload.

use std::fs;
use std::path::Path;

use super::Descriptor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"FEAT";
const HEADER_LEN: usize = 12;

pub fn encode<T: Real>(descriptors: &[Descriptor<T>]) -> Result<Vec<u8>> {
    let dim = descriptors.first().map_or(0, |d| d.dim());
    if descriptors.iter().any(|d| d.dim() != dim) {
        return Err(Error::InvalidInput(
            "descriptors in one FEAT file must share a dimension".into(),
        ));
    }
    let count = u32::try_from(descriptors.len())
        .map_err(|_| Error::InvalidInput("too many descriptors for FEAT".into()))?;
    let dim32 =
        u32::try_from(dim).map_err(|_| Error::InvalidInput("descriptor too long for FEAT".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + descriptors.len() * dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for d in descriptors {
        for &v in d.values() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a FEAT payload; `path` is only used in error messages.
pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<Vec<Descriptor<T>>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::ingest(path, "file shorter than FEAT header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::ingest(path, "bad magic, expected FEAT"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if dim == 0 && count > 0 {
        return Err(Error::ingest(path, "descriptor dimension is zero"));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::ingest(path, "header sizes overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::ingest(
            path,
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::ingest(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    for (r, row) in payload.chunks_exact(dim * 4).enumerate().take(count) {
        let values: Vec<T> = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .map(|v| T::from_f32(v).unwrap_or_else(T::nan))
            .collect();
        let d = Descriptor::new(values)
            .map_err(|_| Error::ingest(path, format!("row {r} has a non-finite value")))?;
        out.push(d);
    }
    Ok(out)
}

pub fn load_descriptor_file<T: Real>(path: &Path) -> Result<Vec<Descriptor<T>>> {
    let bytes = fs::read(path).map_err(|e| Error::ingest(path, e))?;
    decode(&bytes, path)
}

pub fn write_descriptor_file<T: Real>(descriptors: &[Descriptor<T>], path: &Path) -> Result<()> {
    let bytes = encode(descriptors)?;
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}
