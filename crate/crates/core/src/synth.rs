//! Synthetic "speech": harmonic tones at a per-utterance fundamental whose
//! spectral envelope steps through a sequence of vowel-like formant patterns.
//! The unit sequence plays the role of spoken content; the fundamental plays
//! the role of the speaker. A faint seeded noise floor stands in for the
//! recording background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::Waveform;

/// First and second formant (Hz) of each unit.
pub const UNIT_FORMANTS: [(f64, f64); 8] = [
    (300.0, 2300.0),
    (400.0, 2000.0),
    (600.0, 1800.0),
    (750.0, 1200.0),
    (600.0, 900.0),
    (400.0, 800.0),
    (300.0, 900.0),
    (500.0, 1500.0),
];

const FORMANT_BANDWIDTH_HZ: f64 = 120.0;
const MAX_HARMONIC_HZ: f64 = 5000.0;
const RAMP_S: f64 = 0.01;
const PEAK: f64 = 0.5;
/// Half-width of the uniform background noise, relative to full scale.
const NOISE_AMPLITUDE: f64 = 0.008;

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSpec {
    pub f0_hz: f64,
    /// Indices into [`UNIT_FORMANTS`].
    pub units: Vec<usize>,
    pub unit_duration_s: f64,
    pub noise_seed: u64,
}

impl UtteranceSpec {
    pub fn new(f0_hz: f64, units: Vec<usize>, unit_duration_s: f64, noise_seed: u64) -> Self {
        Self {
            f0_hz,
            units,
            unit_duration_s,
            noise_seed,
        }
    }

    /// Random fundamental in 100-250 Hz and units of 0.1-0.25 s, lasting
    /// between `min_s` and `max_s` when the unit length allows it.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, min_s: f64, max_s: f64) -> Self {
        let f0_hz = rng.gen_range(100.0..250.0);
        let unit_duration_s = rng.gen_range(0.1..0.25);
        let fewest = ((min_s / unit_duration_s).ceil() as usize).max(1);
        let most = ((max_s / unit_duration_s).floor() as usize).max(fewest);
        let count = rng.gen_range(fewest..=most);
        let units = (0..count)
            .map(|_| rng.gen_range(0..UNIT_FORMANTS.len()))
            .collect();
        Self {
            f0_hz,
            units,
            unit_duration_s,
            noise_seed: rng.gen(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.units.len() as f64 * self.unit_duration_s
    }
}

fn envelope(freq: f64, (f1, f2): (f64, f64)) -> f64 {
    let peak = |c: f64| (-0.5 * ((freq - c) / FORMANT_BANDWIDTH_HZ).powi(2)).exp();
    // mild spectral tilt keeps low harmonics audible between formants
    0.05 / (1.0 + freq / 1000.0) + peak(f1) + 0.7 * peak(f2)
}

pub fn synthetic_utterance(spec: &UtteranceSpec, sample_rate_hz: u32) -> Result<Waveform> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if spec.units.is_empty() || !positive(spec.f0_hz) || !positive(spec.unit_duration_s) {
        return Err(Error::InvalidArgument(format!(
            "degenerate utterance spec {spec:?}"
        )));
    }
    if let Some(u) = spec.units.iter().find(|&&u| u >= UNIT_FORMANTS.len()) {
        return Err(Error::InvalidArgument(format!("unknown unit {u}")));
    }
    let sr = sample_rate_hz as f64;
    let unit_len = (spec.unit_duration_s * sr).round() as usize;
    let ramp = ((RAMP_S * sr) as usize).min(unit_len / 2).max(1);
    let harmonics: Vec<f64> = (1..)
        .map(|k| k as f64 * spec.f0_hz)
        .take_while(|&f| f < MAX_HARMONIC_HZ.min(sr / 2.0))
        .collect();

    let mut samples = Vec::with_capacity(unit_len * spec.units.len());
    for (u, &unit) in spec.units.iter().enumerate() {
        let amps: Vec<f64> = harmonics
            .iter()
            .map(|&f| envelope(f, UNIT_FORMANTS[unit]))
            .collect();
        for i in 0..unit_len {
            // phase is continuous across units
            let t = (u * unit_len + i) as f64 / sr;
            let gain = (i.min(unit_len - 1 - i) as f64 / ramp as f64).min(1.0);
            let v: f64 = harmonics
                .iter()
                .zip(&amps)
                .map(|(&f, &a)| a * (2.0 * PI * f * t).sin())
                .sum();
            samples.push(gain * v);
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s *= PEAK / peak);
    }
    let mut noise = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    samples
        .iter_mut()
        .for_each(|s| *s += noise.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE));
    Waveform::new(samples, sample_rate_hz)
}

/// `count` random utterances of 1-2 s.
pub fn synthetic_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    sample_rate_hz: u32,
) -> Result<Vec<(UtteranceSpec, Waveform)>> {
    (0..count)
        .map(|_| {
            let spec = UtteranceSpec::random(rng, 1.0, 2.0);
            let w = synthetic_utterance(&spec, sample_rate_hz)?;
            Ok((spec, w))
        })
        .collect()
}
