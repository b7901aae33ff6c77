//! Versioned flat weight file.
//!
//! ```text
//! offset  size        field
//! 0       7           magic "HTXNET1" (ASCII)
//! 7       4           n = number of layer widths, u32 little-endian
//! 11      4 * n       widths [in, h_1, ..., out], u32 little-endian
//! ...     8 * P       parameters, f64 little-endian
//! ```
//!
//! Parameters are written layer by layer: the `out x in` weight matrix in
//! row-major order, then the `out` biases. `P` is the total parameter count;
//! trailing bytes are rejected.

use std::io::{Read, Write};

use super::mlp::MlpNet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"HTXNET1";

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_weights<W: Write>(net: &MlpNet, mut out: W) -> Result<()> {
    out.write_all(MAGIC).map_err(io_err)?;
    let widths = net.widths();
    out.write_all(&(widths.len() as u32).to_le_bytes()).map_err(io_err)?;
    for &w in widths {
        let w = u32::try_from(w).map_err(|_| Error::Format(format!("width {w} exceeds u32")))?;
        out.write_all(&w.to_le_bytes()).map_err(io_err)?;
    }
    for p in net.params() {
        out.write_all(&p.to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_weights<R: Read>(mut input: R) -> Result<MlpNet> {
    let mut magic = [0u8; 7];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not an HTXNET1 weight file".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(io_err)?;
    let n = u32::from_le_bytes(word) as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let mut widths = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut word).map_err(io_err)?;
        widths.push(u32::from_le_bytes(word) as usize);
    }
    let count: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() != 8 * count {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            8 * count,
            bytes.len()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    MlpNet::from_params(&widths, &params)
}
