//! `AFP1` feature files: magic, u32 frames, u32 dims, u16 kind, u16 flags,
//! then frames x dims little-endian f32 values.

use super::{AcousticFeatures, FeatureKind};
use crate::binio::{read_u16, read_u32};
use crate::{Error, Result};

pub const AFP_MAGIC: &[u8; 4] = b"AFP1";
const FLAG_DELTAS: u16 = 1;
const FLAG_NORMALIZED: u16 = 2;
const HEADER_LEN: usize = 16;

pub fn write_afp(f: &AcousticFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.data.len());
    out.extend_from_slice(AFP_MAGIC);
    out.extend_from_slice(&(f.frames as u32).to_le_bytes());
    out.extend_from_slice(&(f.dims as u32).to_le_bytes());
    out.extend_from_slice(&f.kind.code().to_le_bytes());
    let mut flags = 0u16;
    if f.deltas {
        flags |= FLAG_DELTAS;
    }
    if f.normalized {
        flags |= FLAG_NORMALIZED;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    for v in &f.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Window and step are not stored; the fixed 20 ms / 10 ms framing is assumed.
pub fn read_afp(bytes: &[u8]) -> Result<AcousticFeatures> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(0, "AFP1 header truncated"));
    }
    if &bytes[..4] != AFP_MAGIC {
        return Err(Error::UnsupportedFormat("missing AFP1 magic".into()));
    }
    let frames = read_u32(bytes, 4) as usize;
    let dims = read_u32(bytes, 8) as usize;
    let kind = FeatureKind::from_code(read_u16(bytes, 12))?;
    let flags = read_u16(bytes, 14);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != frames * dims * 4 {
        return Err(Error::parse(
            0,
            format!("AFP1 payload is {} bytes, expected {}", payload.len(), frames * dims * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(AcousticFeatures {
        data,
        frames,
        dims,
        kind,
        window_ms: 20,
        step_ms: 10,
        deltas: flags & FLAG_DELTAS != 0,
        normalized: flags & FLAG_NORMALIZED != 0,
    })
}
