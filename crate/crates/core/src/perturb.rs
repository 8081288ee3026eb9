//! Content-preserving perturbations: speed change and pitch shift.
//!
//! Speed perturbation resamples by linear interpolation, so both duration and
//! pitch change. Pitch shift resamples and then restores the duration with a
//! phase vocoder, leaving only the frequency scaling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Waveform;

pub const SPEED_RANGE: (f64, f64) = (0.5, 2.0);
pub const MAX_SEMITONES: i32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub speed_factors: Vec<f64>,
    pub pitch_semitone_choices: Vec<i32>,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            speed_factors: vec![0.9, 1.0, 1.1],
            pitch_semitone_choices: vec![-2, -1, 0, 1, 2],
            seed: 42,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speed_factors.is_empty() {
            return Err(Error::Config("speed_factors must not be empty".into()));
        }
        if let Some(f) = self.speed_factors.iter().find(|&&f| !speed_in_range(f)) {
            return Err(Error::Config(format!(
                "speed factor {f} outside ({}, {})",
                SPEED_RANGE.0, SPEED_RANGE.1
            )));
        }
        if self.pitch_semitone_choices.is_empty() {
            return Err(Error::Config("pitch_semitone_choices must not be empty".into()));
        }
        if let Some(s) = self
            .pitch_semitone_choices
            .iter()
            .find(|s| s.abs() > MAX_SEMITONES)
        {
            return Err(Error::Config(format!(
                "semitone choice {s} outside [-{MAX_SEMITONES}, {MAX_SEMITONES}]"
            )));
        }
        Ok(())
    }
}

fn speed_in_range(f: f64) -> bool {
    f > SPEED_RANGE.0 && f < SPEED_RANGE.1
}

/// Reads `samples` at positions `t * factor` with linear interpolation,
/// producing `round(len / factor)` samples. Positions past the end hold the
/// last sample.
pub(crate) fn resample_linear(samples: &[f64], factor: f64) -> Vec<f64> {
    let n = samples.len();
    let out_len = (n as f64 / factor).round() as usize;
    (0..out_len)
        .map(|t| {
            let pos = t as f64 * factor;
            let i = pos.floor() as usize;
            if i + 1 >= n {
                samples[n - 1]
            } else {
                let frac = pos - i as f64;
                samples[i] + frac * (samples[i + 1] - samples[i])
            }
        })
        .collect()
}

pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !speed_in_range(factor) {
        return Err(Error::InvalidArgument(format!(
            "speed factor {factor} outside ({}, {})",
            SPEED_RANGE.0, SPEED_RANGE.1
        )));
    }
    w.require_non_empty("speed_perturb")?;
    if factor == 1.0 {
        return Ok(w.clone());
    }
    Waveform::new(resample_linear(w.samples(), factor), w.sample_rate_hz())
}

/// STFT phase vocoder used for duration correction.
#[derive(Debug, Clone)]
pub struct PhaseVocoder {
    n_fft: usize,
    analysis_hop: usize,
    window: Vec<f64>,
}

impl Default for PhaseVocoder {
    fn default() -> Self {
        Self::new(1024, 256)
    }
}

impl PhaseVocoder {
    pub fn new(n_fft: usize, analysis_hop: usize) -> Self {
        assert!(
            n_fft >= 4 && n_fft.is_multiple_of(2),
            "n_fft must be even and >= 4"
        );
        assert!(analysis_hop >= 1 && analysis_hop <= n_fft / 2);
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        Self {
            n_fft,
            analysis_hop,
            window,
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn synthesis_hop(&self, stretch: f64) -> usize {
        ((self.analysis_hop as f64 * stretch).round() as usize).max(1)
    }

    /// Stretches duration by `stretch` keeping frequencies, and returns exactly
    /// `out_len` samples aligned to the start of the input.
    pub fn time_stretch(&self, samples: &[f64], stretch: f64, out_len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let half = n / 2;
        let ha = self.analysis_hop;
        let hs = self.synthesis_hop(stretch);

        // Frame t is centred on input sample t*ha and output sample t*hs.
        let frames = out_len.div_ceil(hs) + 1;
        let padded_len = (frames - 1) * ha + n;
        let mut padded = vec![0.0; padded_len.max(half + samples.len())];
        padded[half..half + samples.len()].copy_from_slice(samples);

        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);

        let bins = half + 1;
        let mut prev_phase = vec![0.0; bins];
        let mut out_phase = vec![0.0; bins];
        let synth_len = (frames - 1) * hs + n;
        let mut acc = vec![0.0; synth_len];
        let mut wsum = vec![0.0; synth_len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];

        for t in 0..frames {
            let start = t * ha;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            fwd.process(&mut buf);

            for k in 0..bins {
                let (mag, phase) = buf[k].to_polar();
                if t == 0 {
                    out_phase[k] = phase;
                } else {
                    let omega = 2.0 * PI * k as f64 / n as f64;
                    let mut dev = phase - prev_phase[k] - omega * ha as f64;
                    dev -= 2.0 * PI * (dev / (2.0 * PI)).round();
                    out_phase[k] += (omega + dev / ha as f64) * hs as f64;
                }
                prev_phase[k] = phase;
                buf[k] = Complex::from_polar(mag, out_phase[k]);
            }
            // DC and Nyquist must be real for a real inverse.
            buf[0] = Complex::new(buf[0].re, 0.0);
            buf[half] = Complex::new(buf[half].re, 0.0);
            for k in 1..half {
                buf[n - k] = buf[k].conj();
            }
            inv.process(&mut buf);

            let out_start = t * hs;
            for i in 0..n {
                let w = self.window[i];
                acc[out_start + i] += buf[i].re / n as f64 * w;
                wsum[out_start + i] += w * w;
            }
        }

        (half..half + out_len)
            .map(|p| {
                if p < synth_len && wsum[p] > 1e-8 {
                    acc[p] / wsum[p]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Scales every frequency by `2^(semitones/12)` while keeping the duration.
pub fn pitch_shift(w: &Waveform, semitones: i32) -> Result<Waveform> {
    pitch_shift_with(w, semitones, &PhaseVocoder::default())
}

pub fn pitch_shift_with(w: &Waveform, semitones: i32, vocoder: &PhaseVocoder) -> Result<Waveform> {
    if semitones.abs() > MAX_SEMITONES {
        return Err(Error::InvalidArgument(format!(
            "pitch shift of {semitones} semitones outside [-{MAX_SEMITONES}, {MAX_SEMITONES}]"
        )));
    }
    if semitones == 0 {
        return Ok(w.clone());
    }
    if w.len() < vocoder.n_fft() {
        return Err(Error::InvalidArgument(format!(
            "waveform of {} samples is shorter than one {}-sample STFT window",
            w.len(),
            vocoder.n_fft()
        )));
    }
    let ratio = 2f64.powf(semitones as f64 / 12.0);
    let raised = resample_linear(w.samples(), ratio);
    let restored = vocoder.time_stretch(&raised, ratio, w.len());
    Waveform::new(restored, w.sample_rate_hz())
}

/// Randomness for the `draw_index`-th perturbation under `seed`.
pub fn perturbation_rng(seed: u64, draw_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw_index);
    rng
}

/// Draws one speed factor and one semitone value uniformly from `cfg` and
/// applies speed perturbation followed by pitch shift.
pub fn make_perturbed<R: Rng + ?Sized>(w: &Waveform, cfg: &PerturbConfig, rng: &mut R) -> Result<Waveform> {
    cfg.validate()?;
    let factor = cfg.speed_factors[rng.gen_range(0..cfg.speed_factors.len())];
    let semis = cfg.pitch_semitone_choices[rng.gen_range(0..cfg.pitch_semitone_choices.len())];
    let sped = speed_perturb(w, factor)?;
    pitch_shift(&sped, semis)
}
