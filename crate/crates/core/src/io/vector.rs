//! Raw embedding files: `f32` little-endian, vectors back to back, no header.
//!
//! A query file holds exactly one vector; a matrix file holds `n * dim`
//! floats and the caller supplies `dim`.

use std::fs;
use std::path::Path;

use super::bundle::{decode_f32, encode_f32};
use crate::scene::Embedding;
use crate::{Error, Result};

/// Whole file as one vector.
pub fn read_embedding(path: &Path) -> Result<Embedding> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a nonempty multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    let v = Embedding::new(decode_f32(&bytes));
    if !v.is_finite() {
        return Err(Error::Format(format!("{}: non-finite value", path.display())));
    }
    Ok(v)
}

/// File of `n` vectors of length `dim`.
pub fn read_embeddings(path: &Path, dim: usize) -> Result<Vec<Embedding>> {
    if dim == 0 {
        return Err(Error::InvalidInput("embedding dimension must be positive".into()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % (4 * dim) != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a multiple of {dim} floats",
            path.display(),
            bytes.len()
        )));
    }
    let values = decode_f32(&bytes);
    let out: Vec<Embedding> = values.chunks_exact(dim).map(|c| Embedding::new(c.to_vec())).collect();
    if !out.iter().all(Embedding::is_finite) {
        return Err(Error::Format(format!("{}: non-finite value", path.display())));
    }
    Ok(out)
}

/// Write vectors back to back, rounding to `f32`.
pub fn write_embeddings(path: &Path, vectors: &[Embedding]) -> Result<()> {
    let mut bytes = Vec::new();
    for v in vectors {
        encode_f32(v.as_slice().iter().copied(), &mut bytes);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
