//! Log-mel filterbank features with an HTK mel scale.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FeatureSequence, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub win_length_samples: usize,
    pub hop_length_samples: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            win_length_samples: 400,
            hop_length_samples: 160,
            n_fft: 512,
            n_mels: 40,
            fmin_hz: 20.0,
            fmax_hz: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive".into());
        }
        if self.win_length_samples == 0 || self.win_length_samples > self.n_fft {
            return bad(format!(
                "win_length_samples must be in 1..={} (n_fft), got {}",
                self.n_fft, self.win_length_samples
            ));
        }
        if self.hop_length_samples == 0 {
            return bad("hop_length_samples must be >= 1".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad(format!(
                "need 0 <= fmin_hz < fmax_hz <= {nyquist}, got fmin {} fmax {}",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive and finite".into());
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples, or `None` if shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.win_length_samples)
            .then(|| 1 + (len - self.win_length_samples) / self.hop_length_samples)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels` rows over `n_fft / 2 + 1` FFT bins, peak 1.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

pub fn log_mel(w: &Waveform, cfg: &MelConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    if w.sample_rate_hz() != cfg.sample_rate_hz {
        return Err(Error::InvalidArgument(format!(
            "waveform is {} Hz but the frontend expects {} Hz",
            w.sample_rate_hz(),
            cfg.sample_rate_hz
        )));
    }
    let frames = cfg.frame_count(w.len()).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            w.len(),
            cfg.win_length_samples
        ))
    })?;
    let window = hann_periodic(cfg.win_length_samples);
    let filters = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let samples = w.samples();

    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; n_bins];
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    for t in 0..frames {
        let start = t * cfg.hop_length_samples;
        buf.fill(Complex::new(0.0, 0.0));
        for (slot, (s, h)) in buf
            .iter_mut()
            .zip(samples[start..start + cfg.win_length_samples].iter().zip(&window))
        {
            slot.re = s * h;
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &filters {
            let energy: f64 = filt.iter().zip(&power).map(|(f, p)| f * p).sum();
            out.push(energy.max(cfg.log_floor).ln());
        }
    }
    Ok(FeatureSequence::new(out, frames, cfg.n_mels)?
        .with_frame_hop(cfg.hop_length_samples as f64 / cfg.sample_rate_hz as f64))
}
