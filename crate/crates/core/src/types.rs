//! Value types shared by every module.
//!
//! All numerics are `f64`. Indices are 0-based throughout the crate.

use crate::error::{Error, Result};

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::InvalidArgument(format!("{what}: empty waveform")))
        } else {
            Ok(())
        }
    }
}

/// A `T x D` matrix of frame vectors stored frame-major.
///
/// Construction guarantees `T >= 1`, `D >= 1` and that every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    len: usize,
    dim: usize,
    frame_hop_s: Option<f64>,
}

impl FeatureSequence {
    pub fn new(data: Vec<f64>, len: usize, dim: usize) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature sequence must be at least 1x1, got {len}x{dim}"
            )));
        }
        if data.len() != len * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form a {len}x{dim} sequence",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value at frame {}, dim {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            data,
            len,
            dim,
            frame_hop_s: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].as_ref().len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(data, rows.len(), dim)
    }

    pub fn with_frame_hop(mut self, hop_s: f64) -> Self {
        self.frame_hop_s = Some(hop_s);
        self
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-frame dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_hop_s(&self) -> Option<f64> {
        self.frame_hop_s
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Frames `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(Error::InvalidArgument(format!(
                "frame range {start}..{end} outside 0..{}",
                self.len
            )));
        }
        let mut out = Self::new(
            self.data[start * self.dim..end * self.dim].to_vec(),
            end - start,
            self.dim,
        )?;
        out.frame_hop_s = self.frame_hop_s;
        Ok(out)
    }

    pub(crate) fn ensure_same_dim(&self, other: &Self, what: &str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "{what}: feature dims {} and {} differ",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// Monotonic warping path through an `m x n` grid.
///
/// Steps are 0-based `(i, j)` pairs; the path runs from `(0, 0)` to
/// `(m - 1, n - 1)` and each step advances by `(1, 0)`, `(0, 1)` or `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn new(steps: Vec<(usize, usize)>, m: usize, n: usize) -> Result<Self> {
        let (Some(&first), Some(&last)) = (steps.first(), steps.last()) else {
            return Err(Error::InvalidArgument("empty alignment path".into()));
        };
        if first != (0, 0) {
            return Err(Error::InvalidArgument(format!(
                "path must start at (0, 0), starts at {first:?}"
            )));
        }
        if m == 0 || n == 0 || last != (m - 1, n - 1) {
            return Err(Error::InvalidArgument(format!(
                "path must end at ({}, {}), ends at {last:?}",
                m.saturating_sub(1),
                n.saturating_sub(1)
            )));
        }
        for w in steps.windows(2) {
            let (a, b) = (w[0], w[1]);
            let di = b.0.checked_sub(a.0);
            let dj = b.1.checked_sub(a.1);
            match (di, dj) {
                (Some(1), Some(0)) | (Some(0), Some(1)) | (Some(1), Some(1)) => {}
                _ => return Err(Error::InvalidArgument(format!("illegal step {a:?} -> {b:?}"))),
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// True when every step is diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.steps.iter().all(|&(i, j)| i == j)
    }
}
