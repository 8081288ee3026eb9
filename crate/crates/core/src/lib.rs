//! Soft-DTW correspondence fine-tuning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`] and [`fseq`]: waveforms, feature sequences, alignment paths and
//!   the binary `.fseq` feature container.
//! - [`frontend`]: 16-bit PCM WAV I/O and a log-mel filterbank.
//! - [`perturb`]: speed perturbation and phase-vocoder pitch shift.
//! - [`softdtw`]: soft-min, soft-DTW with its analytic gradient, the normalized
//!   divergence, hard and subsequence DTW, and a brute-force path oracle.
//! - [`model`]: a frame-wise twin encoder with a shared L2-normalized
//!   projection head and hand-written reverse mode.
//! - [`trainer`]: the correspondence training loop with AdamW and linear warmup.
//! - [`qbe`]: query-by-example scoring and retrieval metrics.
//! - [`synth`]: synthetic harmonic utterances for desk-scale experiments.

pub mod error;
pub mod frontend;
pub mod fseq;
pub mod matrix;
pub mod model;
pub mod perturb;
pub mod qbe;
pub mod softdtw;
pub mod synth;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use types::{AlignmentPath, FeatureSequence, Waveform};
