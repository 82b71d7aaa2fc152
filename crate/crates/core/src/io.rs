//! Matrix serialization: text CSV and the `UILAB1` binary layout.
//!
//! Binary layout: the six ASCII bytes `UILAB1`, little-endian `u64` rows,
//! little-endian `u64` cols, then `rows*cols` little-endian `f64` in
//! column-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 6] = b"UILAB1";

pub fn matrix_to_bytes(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + 8 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 22 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing UILAB1 header".into()));
    }
    let rows = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    let body = &bytes[22..];
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    if body.len() != count * 8 {
        return Err(Error::Format(format!(
            "{rows}x{cols} matrix needs {} payload bytes, found {}",
            count * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::new(rows, cols, data)
}

/// One line per matrix row, 17 significant digits per entry.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{:.16e}", m[(i, j)]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("ragged CSV matrix".into()));
    }
    let flat: Vec<f64> = rows.concat();
    DenseMatrix::from_row_slice(rows.len(), cols, &flat)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes CSV for `.csv` paths and the binary layout otherwise.
pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        fs::write(path, matrix_to_csv(m))?;
    } else {
        fs::write(path, matrix_to_bytes(m))?;
    }
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    if is_csv(path) {
        matrix_from_csv(&fs::read_to_string(path)?)
    } else {
        matrix_from_bytes(&fs::read(path)?)
    }
}

/// SHA-256 of the binary serialization, hex encoded.
pub fn matrix_hash(m: &DenseMatrix) -> String {
    hex::encode(Sha256::digest(matrix_to_bytes(m)))
}
