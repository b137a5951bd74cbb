//! Per-sample score files: a flat array of little-endian `f32`, no header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_scores(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_scores(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated {
            format: "score",
            expected: (bytes.len() as u64).div_ceil(4) * 4,
            found: bytes.len() as u64,
        });
    }
    let v: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { row, col: 0 });
    }
    Ok(v)
}

pub fn write_scores(path: impl AsRef<Path>, values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scores(values)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scores(&bytes)
}
