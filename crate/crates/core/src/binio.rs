//! Little-endian binary containers shared by several file formats.
//!
//! `IPG1` (indicator posteriorgram) and `ATT1` (attention) are both
//! `magic[4] | u32 rows | u32 cols | rows*cols f32`, row-major.

use crate::{Error, Result};

pub const POSTERIORGRAM_MAGIC: &[u8; 4] = b"IPG1";
pub const ATTENTION_MAGIC: &[u8; 4] = b"ATT1";

/// Dense row-major `f32` matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct F32Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl F32Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn from_rows<T: Copy + Into<f64>>(rows: &[Vec<T>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend(r.iter().map(|&v| v.into() as f32));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }
}

pub fn write_matrix(magic: &[u8; 4], m: &F32Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_matrix(magic: &[u8; 4], bytes: &[u8]) -> Result<F32Matrix> {
    if bytes.len() < 12 {
        return Err(Error::parse(0, "file shorter than header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::UnsupportedFormat(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let rows = read_u32(bytes, 4) as usize;
    let cols = read_u32(bytes, 8) as usize;
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(0, "dimension overflow"))?;
    let payload = &bytes[12..];
    if payload.len() != need {
        return Err(Error::parse(
            0,
            format!("payload is {} bytes, header implies {need}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(F32Matrix { rows, cols, data })
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub(crate) fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_container_round_trip() {
        let m = F32Matrix::new(2, 3, vec![0.1, 0.2, 0.7, 1.0, 0.0, 0.0]).unwrap();
        let bytes = write_matrix(ATTENTION_MAGIC, &m);
        assert_eq!(&bytes[..4], b"ATT1");
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(read_matrix(ATTENTION_MAGIC, &bytes).unwrap(), m);
    }

    #[test]
    fn wrong_magic_and_truncation_rejected() {
        let m = F32Matrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        let bytes = write_matrix(POSTERIORGRAM_MAGIC, &m);
        assert!(matches!(
            read_matrix(ATTENTION_MAGIC, &bytes),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            read_matrix(POSTERIORGRAM_MAGIC, &bytes[..bytes.len() - 1]),
            Err(Error::Parse { .. })
        ));
    }
}
