//! Run configuration file: JSON with optional `train`, `perturb` and `mel`
//! sections, each holding that config's fields. Missing fields take their
//! defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use softcorr::frontend::MelConfig;
use softcorr::perturb::PerturbConfig;
use softcorr::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub mel: MelConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies command-line overrides. `steps` rescales the warmup with the
    /// run length; `seed` drives both training and perturbation draws.
    pub fn with_overrides(mut self, steps: Option<usize>, seed: Option<u64>) -> Self {
        if let Some(steps) = steps {
            self.train = self.train.scaled_to(steps);
        }
        if let Some(seed) = seed {
            self.train.seed = seed;
            self.perturb.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.perturb.validate()?;
        self.mel.validate()?;
        Ok(())
    }
}
