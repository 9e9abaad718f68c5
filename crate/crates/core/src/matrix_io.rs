//! Dense binary matrix files shared by soft targets and embeddings.
//!
//! ```text
//! magic      8 bytes  "RFMMAT01"
//! header_len u32 LE
//! header     header_len bytes of UTF-8 JSON: {"rows", "cols", "layout", "meta"}
//! data       rows * cols f64 LE, row-major
//! ```

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RFMMAT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    /// Layout version of the hashes the matrix was derived from, or the
    /// embedding side for embedding files.
    pub layout: String,
    #[serde(default)]
    pub meta: Value,
}

pub fn write_matrix<W: Write>(mut w: W, m: ArrayView2<'_, f64>, layout: &str, meta: Value) -> Result<()> {
    let header = MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        layout: layout.to_string(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("<matrix>", e))
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<(MatrixHeader, Array2<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<matrix>", e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::input("not a matrix file (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12 + hlen;
    if bytes.len() < body {
        return Err(Error::input("matrix header truncated"));
    }
    let header: MatrixHeader = serde_json::from_slice(&bytes[12..body])?;
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::input("matrix dimensions overflow"))?;
    if bytes.len() - body != expected {
        return Err(Error::input(format!(
            "matrix payload is {} bytes, expected {expected}",
            bytes.len() - body
        )));
    }
    let data = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = Array2::from_shape_vec((header.rows, header.cols), data).map_err(|e| Error::input(e.to_string()))?;
    Ok((header, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn header_and_payload() {
        let m = Array2::from_shape_vec((2, 3), vec![1.0, -2.5, 3.0, 0.0, 1e-300, f64::MAX]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.view(), "rfm-hash-v1", json!({"lambda": 0.85})).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let (h, back) = read_matrix(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.rows, 2);
        assert_eq!(h.cols, 3);
        assert_eq!(h.meta["lambda"], 0.85);

        assert!(read_matrix(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_matrix(&bad[..]).is_err());
    }
}
