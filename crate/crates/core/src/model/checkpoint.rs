//! `.sckp` checkpoint container.
//!
//! Little-endian: magic `SCKP`, `u32` version (1), `u32` frozen-layer count,
//! `u32` tensor count, then per tensor: `u32` name length, UTF-8 name,
//! `u32` rows, `u32` cols, `rows * cols` `f32` values row-major.
//!
//! Tensors, in order: for each encoder layer `i`, `encoder.{i}.weight`
//! (out x in), `encoder.{i}.bias` (out x 1) and `encoder.{i}.activation`
//! (1 x 1; 0 identity, 1 tanh); then `head.weight` (P x D) and `head.bias`
//! (P x 1). The head is auxiliary: downstream use needs only the encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::encoder::{Activation, EncoderParams, Layer};
use super::head::ProjectionHead;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    encoder: &EncoderParams,
    head: &ProjectionHead,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(encoder.n_frozen() as u32).to_le_bytes());
    out.extend_from_slice(&((encoder.layers().len() * 3 + 2) as u32).to_le_bytes());
    for (i, layer) in encoder.layers().iter().enumerate() {
        let (r, c) = layer.weight.shape();
        put_tensor(
            &mut out,
            &format!("encoder.{i}.weight"),
            r,
            c,
            layer.weight.as_slice(),
        );
        put_tensor(&mut out, &format!("encoder.{i}.bias"), r, 1, &layer.bias);
        put_tensor(
            &mut out,
            &format!("encoder.{i}.activation"),
            1,
            1,
            &[layer.activation.tag() as f64],
        );
    }
    let (r, c) = head.weight.shape();
    put_tensor(&mut out, "head.weight", r, c, head.weight.as_slice());
    put_tensor(&mut out, "head.bias", r, 1, &head.bias);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderParams, ProjectionHead)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.into(),
        reason,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let n_frozen = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Matrix> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_owned();
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let payload = r.take(rows * cols * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.insert(name, Matrix::from_vec(rows, cols, data));
    }

    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    };
    let mut layers = Vec::new();
    for i in 0.. {
        let weight = match take(&format!("encoder.{i}.weight")) {
            Ok(w) => w,
            Err(_) if i > 0 => break,
            Err(e) => return Err(e),
        };
        let bias = take(&format!("encoder.{i}.bias"))?.into_vec();
        let tag = take(&format!("encoder.{i}.activation"))?;
        let activation = Activation::from_tag(tag.as_slice()[0] as u8)
            .ok_or_else(|| bad(format!("unknown activation tag in layer {i}")))?;
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    let head = ProjectionHead::new(take("head.weight")?, take("head.bias")?.into_vec())?;
    let encoder = EncoderParams::new(layers, n_frozen)?;
    Ok((encoder, head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_to_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = EncoderParams::init(&[6, 5, 4], Activation::Tanh, 1, &mut rng).unwrap();
        let head = ProjectionHead::init(4, 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sckp");
        write_checkpoint(&p, &enc, &head).unwrap();
        let (enc2, head2) = read_checkpoint(&p).unwrap();
        assert_eq!(enc2.n_frozen(), 1);
        assert_eq!(enc2.layers().len(), 2);
        for (a, b) in enc.layers().iter().zip(enc2.layers()) {
            assert_eq!(a.activation, b.activation);
            for (x, y) in a.weight.as_slice().iter().zip(b.weight.as_slice()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(head.weight.shape(), head2.weight.shape());
        // f32-representable parameters round-trip exactly
        write_checkpoint(&p, &enc2, &head2).unwrap();
        let (enc3, head3) = read_checkpoint(&p).unwrap();
        assert_eq!(enc3, enc2);
        assert_eq!(head3, head2);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sckp");
        fs::write(&p, b"FSEQ\x01\0\0\0").unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::BadMagic { .. })));
        fs::write(&p, b"SCKP\x01\0\0\0\0\0\0\0\x05\0\0\0").unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Truncated { .. })));
    }
}
