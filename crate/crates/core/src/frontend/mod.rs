//! Audio ingestion and log-mel features.

mod mel;
mod wav;

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelConfig};
pub use wav::{decode_wav, encode_wav, load_wav, save_wav};
