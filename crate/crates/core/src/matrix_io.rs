//! Dense matrix persistence.
//!
//! CSV: one row per line, comma separated, blank lines and `#` comments
//! skipped. Binary: little-endian `u64` rows, `u64` cols, then row-major `f64`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let start = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: cannot parse {:?} as a number", lineno + 1, field.trim()))
            })?;
            data.push(v);
        }
        let width = data.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse(format!(
                    "line {}: expected {c} columns, found {width}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

pub fn to_csv(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:e}", a[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_csv(&fs::read_to_string(path)?)
}

pub fn write_csv(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    fs::write(path, to_csv(a))?;
    Ok(())
}

pub fn decode_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Parse("binary matrix shorter than its 16-byte header".into()));
    }
    let word = |k: usize| -> [u8; 8] { bytes[k..k + 8].try_into().expect("8-byte slice") };
    let rows = u64::from_le_bytes(word(0));
    let cols = u64::from_le_bytes(word(8));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| Error::Parse(format!("binary header {rows}x{cols} overflows")))?;
    if bytes.len() - 16 != count {
        return Err(Error::Parse(format!(
            "binary matrix {rows}x{cols} needs {count} payload bytes, found {}",
            bytes.len() - 16
        )));
    }
    let data: Vec<f64> = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(DMatrix::from_row_slice(rows as usize, cols as usize, &data))
}

pub fn encode_binary(a: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * a.len());
    out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.extend_from_slice(&a[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn read_binary(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    decode_binary(&fs::read(path)?)
}

pub fn write_binary(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_binary(a))?;
    w.flush()?;
    Ok(())
}

/// Load by extension: `.csv`/`.txt` as CSV, anything else as binary.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => read_csv(path),
        _ => read_binary(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 0.1, 1e-300, 3.0, f64::MAX]);
        assert_eq!(parse_csv(&to_csv(&a)).unwrap(), a);
    }

    #[test]
    fn csv_rejects_ragged() {
        assert!(parse_csv("1,2\n3\n").is_err());
        assert!(parse_csv("1,x\n").is_err());
        assert_eq!(parse_csv("# c\n\n1, 2\n").unwrap().shape(), (1, 2));
    }

    #[test]
    fn binary_round_trip() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, -6.0]);
        let bytes = encode_binary(&a);
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(decode_binary(&bytes).unwrap(), a);
        assert!(decode_binary(&bytes[..40]).is_err());
    }
}
