//! `ftkm-binary` and CSV matrix files.
//!
//! Binary layout (little-endian): magic `FTKM`, `u32` version = 1, `u8`
//! precision tag (4 = single, 8 = double), three zero bytes, `u64` rows,
//! `u64` cols, then `rows * cols` row-major elements.

use std::fs;
use std::path::Path;

use super::{DynMat, Mat, Precision, Real};
use crate::error::{Error, Result};

pub const FTKM_MAGIC: &[u8; 4] = b"FTKM";
pub const FTKM_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    FtkmBinary,
}

impl FileFormat {
    /// `.csv` files are CSV, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::FtkmBinary,
        }
    }
}

/// Loads a matrix. CSV carries no precision tag and loads as double.
pub fn mat_load(path: &Path, format: FileFormat) -> Result<DynMat> {
    match format {
        FileFormat::Csv => Ok(DynMat::Double(mat_load_csv(path)?)),
        FileFormat::FtkmBinary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes, path)
        }
    }
}

pub fn mat_store(m: &DynMat, path: &Path, format: FileFormat) -> Result<()> {
    match m {
        DynMat::Single(m) => store_typed(m, path, format),
        DynMat::Double(m) => store_typed(m, path, format),
    }
}

pub fn store_typed<T: Real>(m: &Mat<T>, path: &Path, format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::Csv => encode_csv(m).into_bytes(),
        FileFormat::FtkmBinary => encode_binary(m),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn mat_load_csv<T: Real>(path: &Path) -> Result<Mat<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn encode_binary<T: Real>(m: &Mat<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * T::PRECISION.bytes());
    out.extend_from_slice(FTKM_MAGIC);
    out.extend_from_slice(&FTKM_VERSION.to_le_bytes());
    out.push(T::PRECISION.bytes() as u8);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<DynMat> {
    let fail = |msg: String| Error::Format {
        path: path.to_path_buf(),
        row: None,
        col: None,
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FTKM_MAGIC {
        return Err(fail("bad magic, expected FTKM".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FTKM_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let precision = Precision::from_tag(bytes[8])
        .ok_or_else(|| fail(format!("bad precision tag {}", bytes[8])))?;
    if bytes[9..12] != [0, 0, 0] {
        return Err(fail("reserved header bytes must be zero".into()));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let overflow = || fail(format!("dimension overflow {rows}x{cols}"));
    let rows = usize::try_from(rows).map_err(|_| overflow())?;
    let cols = usize::try_from(cols).map_err(|_| overflow())?;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(precision.bytes()))
        .ok_or_else(overflow)?;
    if bytes.len() - HEADER_LEN != payload {
        return Err(fail(format!(
            "payload is {} bytes, header implies {payload}",
            bytes.len() - HEADER_LEN
        )));
    }
    let body = &bytes[HEADER_LEN..];
    Ok(match precision {
        Precision::Single => DynMat::Single(decode_body(body, rows, cols, path)?),
        Precision::Double => DynMat::Double(decode_body(body, rows, cols, path)?),
    })
}

fn decode_body<T: Real>(body: &[u8], rows: usize, cols: usize, path: &Path) -> Result<Mat<T>> {
    let w = T::PRECISION.bytes();
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, chunk) in body.chunks_exact(w).enumerate() {
        let v = T::read_le(chunk);
        if !v.is_finite() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                row: Some(idx / cols + 1),
                col: Some(idx % cols + 1),
                msg: format!("non-finite value {v}"),
            });
        }
        data.push(v);
    }
    Mat::from_vec(rows, cols, data)
}

/// Shortest round-trip representation, one row per line.
pub fn encode_csv<T: Real>(m: &Mat<T>) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_csv<T: Real>(text: &str, path: &Path) -> Result<Mat<T>> {
    let fail = |row: Option<usize>, col: Option<usize>, msg: String| Error::Format {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (li, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let mut n = 0usize;
        for (ci, tok) in line.split(',').enumerate() {
            let tok = tok.trim();
            let v: T = tok.parse().map_err(|_| {
                fail(
                    Some(li + 1),
                    Some(ci + 1),
                    format!("cannot parse '{tok}' as a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(fail(
                    Some(li + 1),
                    Some(ci + 1),
                    format!("non-finite value '{tok}'"),
                ));
            }
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(fail(
                    Some(li + 1),
                    None,
                    format!("expected {c} columns, found {n}"),
                ))
            }
            _ => {}
        }
    }
    let cols = cols.ok_or_else(|| fail(None, None, "empty CSV file".into()))?;
    Mat::from_vec(rows, cols, data)
}
