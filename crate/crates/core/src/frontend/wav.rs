//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Waveform;

const PCM: u16 = 1;

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Wav {
        path: path.into(),
        reason: reason.into(),
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, path)
}

/// Parses a WAV image, scanning chunks for `fmt ` and `data`.
pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF/WAVE file"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        // Writers that stream sometimes leave the data size unset; clamp to the file.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(wav_err(path, "fmt chunk too short"));
                }
                let u16_at = |o: usize| u16::from_le_bytes(body[o..o + 2].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| wav_err(path, "missing fmt chunk"))?;
    if format != PCM {
        return Err(wav_err(path, format!("PCM required, format tag is {format}")));
    }
    if channels != 1 {
        return Err(wav_err(
            path,
            format!("mono required, file has {channels} channels"),
        ));
    }
    if bits != 16 {
        return Err(wav_err(
            path,
            format!("16-bit samples required, file has {bits}-bit"),
        ));
    }
    if rate == 0 {
        return Err(wav_err(path, "sample rate is zero"));
    }
    let data = data.ok_or_else(|| wav_err(path, "missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, rate)
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Canonical 44-byte-header PCM image. Amplitudes outside `[-1, 1]` are clipped.
pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    w.require_non_empty("save_wav")?;
    let clipped = w.samples().iter().filter(|s| s.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("clipping {clipped} samples outside [-1, 1]");
    }
    let data_len = (w.len() * 2) as u32;
    let rate = w.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize(s.clamp(-1.0, 1.0)).to_le_bytes());
    }
    Ok(out)
}

pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(w)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
