//! Correspondence fine-tuning loop.
//!
//! Each update draws, per pair, a side bit `k`: with `k = 0` the perturbed
//! utterance goes through the learnable branch and the original through the
//! frozen one, with `k = 1` the other way round. The loss is the normalized
//! soft-DTW divergence divided by `m + n`, averaged over the batch.

mod optim;
mod run;

pub use optim::{lr_at, AdamW};
pub use run::{load_manifest, run_training, TrainingOutcome, CHECKPOINT_EVERY};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{log_mel, MelConfig};
use crate::model::{forward_branch, Gradients, ModelConfig, TwinEncoder};
use crate::softdtw::{hard_dtw, SoftDtwConfig};
use crate::types::{FeatureSequence, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 2.0e-5,
            warmup_steps: 1000,
            total_steps: 3600,
            batch_size: 8,
            gamma: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return bad(format!("lr_base must be positive, got {}", self.lr_base));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be >= 1".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Same schedule shape over `total_steps` updates: warmup keeps its
    /// fraction of the run.
    pub fn scaled_to(&self, total_steps: usize) -> Self {
        let frac = self.warmup_steps as f64 / self.total_steps.max(1) as f64;
        Self {
            total_steps,
            warmup_steps: ((frac * total_steps as f64).round() as usize).min(total_steps),
            ..self.clone()
        }
    }

    pub fn softdtw(&self) -> SoftDtwConfig {
        SoftDtwConfig::with_gamma(self.gamma)
    }
}

/// One optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Side bit of every pair in the batch, in pair order.
    pub sides: Vec<u8>,
}

impl StepRecord {
    /// The side bit, when the update consisted of a single pair.
    pub fn side_bit(&self) -> Option<u8> {
        match self.sides.as_slice() {
            [k] => Some(*k),
            _ => None,
        }
    }

    /// JSON-lines row: `step`, `loss`, `lr`, plus `k` for single-pair batches.
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::json!({
            "step": self.step,
            "loss": self.loss,
            "lr": self.lr,
        });
        if let Some(k) = self.side_bit() {
            obj["k"] = serde_json::json!(k);
        }
        obj.to_string()
    }
}

/// Which learnable-branch output to compare in [`representation_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// Top encoder layer.
    Encoder,
    /// Projected and L2-normalized frames.
    Projection,
}

/// Length-normalized hard-DTW distance between learnable-branch outputs.
pub fn representation_distance(
    model: &TwinEncoder,
    a: &FeatureSequence,
    b: &FeatureSequence,
    which: Representation,
) -> Result<f64> {
    let fa = forward_branch(&model.learnable, &model.head, a, false)?;
    let fb = forward_branch(&model.learnable, &model.head, b, false)?;
    let (ra, rb) = match which {
        Representation::Encoder => (fa.representation(), fb.representation()),
        Representation::Projection => (fa.projection(), fb.projection()),
    };
    Ok(hard_dtw(ra, rb)?.value / (ra.len() + rb.len()) as f64)
}

/// Pair whose loss went non-finite.
#[derive(Debug, Clone)]
pub struct NonFinitePair {
    pub step: usize,
    pub index: usize,
    pub side: u8,
}

/// Optimizer state plus the twin model.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    mel: MelConfig,
    model: TwinEncoder,
    opt: AdamW,
    step: usize,
    side_rng: ChaCha8Rng,
    last_failure: Option<NonFinitePair>,
}

const MODEL_STREAM: u64 = 0;
const SIDE_STREAM: u64 = 1;
pub(crate) const SHUFFLE_STREAM: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, model_cfg: &ModelConfig, mel: MelConfig) -> Result<Self> {
        if model_cfg.dims[0] != mel.n_mels {
            return Err(Error::Config(format!(
                "model input width {} does not match n_mels {}",
                model_cfg.dims[0], mel.n_mels
            )));
        }
        let model = TwinEncoder::init(model_cfg, &mut stream_rng(cfg.seed, MODEL_STREAM))?;
        Self::with_model(cfg, mel, model)
    }

    pub fn with_model(cfg: TrainConfig, mel: MelConfig, model: TwinEncoder) -> Result<Self> {
        cfg.validate()?;
        mel.validate()?;
        Ok(Self {
            opt: AdamW::from_config(&cfg),
            side_rng: stream_rng(cfg.seed, SIDE_STREAM),
            cfg,
            mel,
            model,
            step: 0,
            last_failure: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    pub fn model(&self) -> &TwinEncoder {
        &self.model
    }

    pub fn into_model(self) -> TwinEncoder {
        self.model
    }

    /// Updates taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn last_failure(&self) -> Option<&NonFinitePair> {
        self.last_failure.as_ref()
    }

    /// One update on a single `(original, perturbed)` pair.
    pub fn train_step(&mut self, original: &Waveform, perturbed: &Waveform) -> Result<StepRecord> {
        self.train_batch(&[(original.clone(), perturbed.clone())])
    }

    /// One update on the mean loss of `pairs`.
    pub fn train_batch(&mut self, pairs: &[(Waveform, Waveform)]) -> Result<StepRecord> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let step = self.step + 1;
        let lr = lr_at(step, &self.cfg)?;
        let sides: Vec<u8> = pairs.iter().map(|_| self.side_rng.gen_range(0..=1u8)).collect();
        let sdtw = self.cfg.softdtw();

        let model = &self.model;
        let mel = &self.mel;
        let results: Vec<Result<(f64, Gradients)>> = pairs
            .par_iter()
            .zip(sides.par_iter())
            .map(|((original, perturbed), &k)| {
                let (to_learnable, to_frozen) = if k == 0 {
                    (perturbed, original)
                } else {
                    (original, perturbed)
                };
                let a = log_mel(to_learnable, mel)?;
                let b = log_mel(to_frozen, mel)?;
                let out = model.pair_loss(&a, &b, &sdtw)?;
                Ok((out.loss, out.grads))
            })
            .collect();

        // Fixed pair order keeps the reduction deterministic.
        let mut total = Gradients::zeros(&self.model.learnable, &self.model.head);
        let mut loss = 0.0;
        for (index, r) in results.into_iter().enumerate() {
            let (l, g) = r?;
            if !l.is_finite() || !g.max_abs().is_finite() {
                self.last_failure = Some(NonFinitePair {
                    step,
                    index,
                    side: sides[index],
                });
                return Err(Error::NonFinite(format!(
                    "loss {l} at step {step}, pair {index} (k = {})",
                    sides[index]
                )));
            }
            loss += l;
            total.accumulate(&g);
        }
        let scale = 1.0 / pairs.len() as f64;
        loss *= scale;
        total.scale(scale);

        self.opt
            .step(self.model.learnable_tensors_mut(), total.tensors(), lr);
        self.step = step;
        Ok(StepRecord {
            step,
            loss,
            lr,
            sides,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_utterance, UtteranceSpec};

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig {
            dims: vec![40, 16, 16, 16],
            n_frozen: 1,
            projection_dim: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.lr_base, c.warmup_steps, c.total_steps, c.batch_size, c.gamma),
            (2e-5, 1000, 3600, 8, 0.1)
        );
        assert!(c.validate().is_ok());
        let s = c.scaled_to(500);
        assert_eq!((s.total_steps, s.warmup_steps), (500, 139));
        assert_eq!(c.scaled_to(1).warmup_steps, 0);
        assert!(TrainConfig {
            warmup_steps: 5000,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { lr_base: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn record_json_has_k_only_for_single_pairs() {
        let r = StepRecord {
            step: 3,
            loss: 0.5,
            lr: 1e-5,
            sides: vec![1],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(v, serde_json::json!({"k": 1, "loss": 0.5, "lr": 1e-5, "step": 3}));
        let r = StepRecord {
            sides: vec![0, 1],
            ..r
        };
        assert!(!r.to_json_line().contains("\"k\""));
    }

    #[test]
    fn identical_pair_with_identical_branches_has_zero_loss() {
        let cfg = TrainConfig {
            lr_base: 1e-2,
            warmup_steps: 0,
            total_steps: 5,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg.clone(), &tiny_model_cfg(), MelConfig::default()).unwrap();
        let before = trainer.model().clone();
        let w = synthetic_utterance(&UtteranceSpec::new(150.0, vec![0, 1, 2], 0.1, 1), 16000).unwrap();
        let rec = trainer.train_step(&w, &w).unwrap();
        assert_eq!(rec.loss, 0.0);

        // Gradients are exactly zero, so AdamW only applies decoupled decay.
        let decay = 1.0 - cfg.lr_base * cfg.weight_decay;
        let mut expected = before.clone();
        for t in expected.learnable_tensors_mut() {
            t.iter_mut().for_each(|p| *p *= decay);
        }
        assert_eq!(trainer.model().learnable, expected.learnable);
        assert_eq!(trainer.model().head, expected.head);
        assert_eq!(trainer.model().frozen, before.frozen);
    }

    #[test]
    fn repeated_steps_on_one_pair_reduce_the_loss() {
        let cfg = TrainConfig {
            lr_base: 3e-3,
            warmup_steps: 0,
            total_steps: 20,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, &tiny_model_cfg(), MelConfig::default()).unwrap();
        let a = synthetic_utterance(&UtteranceSpec::new(140.0, vec![3, 1, 4], 0.12, 2), 16000).unwrap();
        let b = synthetic_utterance(&UtteranceSpec::new(180.0, vec![3, 1, 4], 0.11, 3), 16000).unwrap();
        let losses: Vec<f64> = (0..20)
            .map(|_| trainer.train_step(&a, &b).unwrap().loss)
            .collect();
        assert!(losses[19] < losses[0], "{losses:?}");
    }

    #[test]
    fn frozen_parameters_never_move_and_sides_balance() {
        let cfg = TrainConfig {
            lr_base: 1e-2,
            warmup_steps: 10,
            total_steps: 1000,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, &tiny_model_cfg(), MelConfig::default()).unwrap();
        let fp = trainer.model().frozen_fingerprint();
        let frozen_bottom = trainer.model().learnable.layers()[0].clone();
        let short = |f: f64| {
            let s = (0..1200)
                .map(|i| 0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
                .collect();
            Waveform::new(s, 16000).unwrap()
        };
        let (a, b) = (short(200.0), short(230.0));
        let mut zeros = 0usize;
        for _ in 0..1000 {
            let rec = trainer.train_step(&a, &b).unwrap();
            assert!(rec.loss >= -1e-9);
            zeros += (rec.side_bit().unwrap() == 0) as usize;
        }
        assert_eq!(trainer.model().frozen_fingerprint(), fp);
        assert_eq!(trainer.model().learnable.layers()[0], frozen_bottom);
        let frac = zeros as f64 / 1000.0;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25f64 / 1000.0).sqrt(), "{frac}");
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let mel = MelConfig {
            n_mels: 20,
            ..MelConfig::default()
        };
        assert!(Trainer::new(TrainConfig::default(), &ModelConfig::default(), mel).is_err());
    }
}
