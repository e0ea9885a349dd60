//! Binary weight file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "SDNCWT01"
//! header   4 × u32  d_model, d_k, d_v, heads
//! payload  f64      W_Q[0..H), W_K[0..H), W_V[0..H), W_O, each row-major
//! ```

use std::fs;
use std::path::Path;

use crate::controller::LayerParams;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"SDNCWT01";
const HEADER_LEN: usize = 8 + 16;

/// Exact file size for the given dimensions.
pub fn file_len(d_model: usize, d_k: usize, d_v: usize, heads: usize) -> usize {
    HEADER_LEN + 8 * (heads * d_model * d_k * 2 + heads * d_model * d_v + heads * d_v * d_model)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}

pub fn encode(params: &LayerParams) -> Result<Vec<u8>> {
    let (d_model, d_k, d_v, heads) = (params.d_model(), params.d_k(), params.d_v(), params.heads());
    let mut buf = Vec::with_capacity(file_len(d_model, d_k, d_v, heads));
    buf.extend_from_slice(MAGIC);
    for (v, what) in [(d_model, "d_model"), (d_k, "d_k"), (d_v, "d_v"), (heads, "heads")] {
        buf.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    for m in params.matrices() {
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<LayerParams> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dim = |i: usize| {
        let b = &bytes[8 + 4 * i..12 + 4 * i];
        u32::from_le_bytes(b.try_into().expect("4-byte slice")) as usize
    };
    let (d_model, d_k, d_v, heads) = (dim(0), dim(1), dim(2), dim(3));
    if [d_model, d_k, d_v, heads].contains(&0) {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let want = file_len(d_model, d_k, d_v, heads);
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "length {} does not match header (expected {want})",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |rows: usize, cols: usize| {
        let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
        DenseMatrix::new(rows, cols, data)
    };
    let w_q = (0..heads).map(|_| take(d_model, d_k)).collect::<Result<_>>()?;
    let w_k = (0..heads).map(|_| take(d_model, d_k)).collect::<Result<_>>()?;
    let w_v = (0..heads).map(|_| take(d_model, d_v)).collect::<Result<_>>()?;
    let w_o = take(heads * d_v, d_model)?;
    LayerParams::new(d_model, d_k, d_v, w_q, w_k, w_v, w_o)
}

pub fn save(path: &Path, params: &LayerParams) -> std::io::Result<()> {
    let bytes = encode(params).map_err(std::io::Error::other)?;
    fs::write(path, bytes)
}

pub fn load(path: &Path) -> std::io::Result<LayerParams> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
