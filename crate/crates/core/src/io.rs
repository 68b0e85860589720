//! Feature and label files.
//!
//! Features: magic `HTF1`, little-endian `u64` rows, `u64` cols, then
//! `rows × cols` little-endian `f64` values in row-major order.
//!
//! Labels: magic `HTL1`, little-endian `u64` count, then `count`
//! little-endian `i64` labels. A negative label marks a vertex outside the
//! training mask.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::ByteReader;
use crate::matrix::DenseMatrix;

const FEATURE_MAGIC: &[u8; 4] = b"HTF1";
const LABEL_MAGIC: &[u8; 4] = b"HTL1";

pub fn encode_features(m: &DenseMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 8 * m.as_slice().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(Error::Format("feature file: bad magic".into()));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("feature file: size overflow".into()))?;
    let data = r.f64_vec(count)?;
    if !r.is_empty() {
        return Err(Error::Format("feature file: trailing bytes".into()));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// `labels[v] = None` leaves `v` out of the training mask.
pub fn encode_labels(labels: &[Option<usize>]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * labels.len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for l in labels {
        let x: i64 = l.map_or(-1, |c| c as i64);
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<Option<usize>>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != LABEL_MAGIC {
        return Err(Error::Format("label file: bad magic".into()));
    }
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let x = i64::from_le_bytes(r.take(8)?.try_into().unwrap());
        out.push(usize::try_from(x).ok());
    }
    if !r.is_empty() {
        return Err(Error::Format("label file: trailing bytes".into()));
    }
    Ok(out)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_features(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Option<usize>>> {
    let path = path.as_ref();
    decode_labels(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[Option<usize>]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}
