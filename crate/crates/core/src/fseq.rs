//! `.fseq` feature container.
//!
//! Little-endian layout:
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `FSEQ`                   |
//! | 4      | 4 (u32)   | version, currently 1           |
//! | 8      | 4 (u32)   | frame count `T`                |
//! | 12     | 4 (u32)   | frame dimension `D`            |
//! | 16     | `4*T*D`   | `f32` values, frame-major      |
//!
//! Values are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::FeatureSequence;

pub const MAGIC: [u8; 4] = *b"FSEQ";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for &v in seq.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses an in-memory `.fseq` image; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: MAGIC,
            found: magic,
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            expected: VERSION,
            found: version,
        });
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let needed = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidArgument(format!("{}: header {t}x{d} overflows", path.display())))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < needed {
        return Err(Error::Truncated {
            path: path.into(),
            needed,
            available: payload.len(),
        });
    }
    let data = payload[..needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureSequence::new(data, t, d)
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let seq = decode(&bytes, path)?;
    Ok(seq)
}
