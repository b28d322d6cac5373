//! `snowtensor v1` binary tensor blobs.
//!
//! An ASCII header line `snowtensor v1 dtype=f32 shape=D0,D1,...\n` followed
//! by the row-major payload as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "snowtensor v1 dtype=f32 shape=";
const MAX_HEADER: usize = 256;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let header = format!("{MAGIC}{}\n", dims.join(","));
    let mut out = Vec::with_capacity(header.len() + 4 * t.len());
    out.extend_from_slice(header.as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a blob; `name` is used in error messages.
pub fn decode(bytes: &[u8], name: &str) -> Result<Tensor> {
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(name, 0, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format(name, 0, "header is not ASCII"))?;
    let dims = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::format(name, 0, format!("bad magic: {header:?}")))?;
    let shape = dims
        .split(',')
        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::format(name, MAGIC.len() as u64, format!("bad shape {dims:?}")))?;
    let count: usize = shape.iter().product();
    let payload = &bytes[newline + 1..];
    let want = count * 4;
    if payload.len() != want {
        return Err(Error::format(
            name,
            (newline + 1 + payload.len().min(want)) as u64,
            format!(
                "payload holds {} bytes, shape {shape:?} needs {want}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    decode(&bytes, &name)
}
