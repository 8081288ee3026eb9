//! Manifest-driven training run with metrics and checkpoints on disk.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{stream_rng, StepRecord, TrainConfig, Trainer, SHUFFLE_STREAM};
use crate::error::{Error, Result};
use crate::frontend::{load_wav, save_wav, MelConfig};
use crate::model::{write_checkpoint, ModelConfig, TwinEncoder};
use crate::perturb::{make_perturbed, perturbation_rng, PerturbConfig, PhaseVocoder};
use crate::types::Waveform;

pub const CHECKPOINT_EVERY: usize = 500;
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.sckp";

/// Reads one audio path per line. Blank lines are skipped; relative paths
/// are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let p = Path::new(line);
        let resolved = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        };
        if !seen.insert(resolved.clone()) {
            return Err(Error::InvalidArgument(format!(
                "{}: duplicate manifest entry {line}",
                path.display()
            )));
        }
        entries.push(resolved);
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: manifest is empty",
            path.display()
        )));
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub records: Vec<StepRecord>,
    pub initial_model: TwinEncoder,
    pub model: TwinEncoder,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub skipped: Vec<PathBuf>,
}

fn load_corpus(manifest: &[PathBuf], mel: &MelConfig) -> (Vec<Waveform>, Vec<PathBuf>, Vec<PathBuf>) {
    let min_len = mel.win_length_samples.max(PhaseVocoder::default().n_fft());
    let mut audio = Vec::new();
    let mut loaded = Vec::new();
    let mut skipped = Vec::new();
    for path in manifest {
        let reason = match load_wav(path) {
            Ok(w) if w.sample_rate_hz() != mel.sample_rate_hz => format!(
                "sample rate {} Hz, pipeline expects {} Hz",
                w.sample_rate_hz(),
                mel.sample_rate_hz
            ),
            Ok(w) if w.len() < min_len => format!("only {} samples, need {min_len}", w.len()),
            Ok(w) => {
                audio.push(w);
                loaded.push(path.clone());
                continue;
            }
            Err(e) => e.to_string(),
        };
        log::warn!("skipping {}: {reason}", path.display());
        skipped.push(path.clone());
    }
    (audio, loaded, skipped)
}

/// Trains for `cfg.total_steps` updates over the shuffled corpus, writing
/// `metrics.jsonl`, a checkpoint every [`CHECKPOINT_EVERY`] updates and at the
/// last one, and `final.sckp`.
pub fn run_training(
    manifest: &[PathBuf],
    cfg: &TrainConfig,
    perturb: &PerturbConfig,
    mel: &MelConfig,
    model_cfg: &ModelConfig,
    out_dir: &Path,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    perturb.validate()?;
    mel.validate()?;
    model_cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("manifest is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (audio, sources, skipped) = load_corpus(manifest, mel);
    if audio.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "none of the {} manifest entries could be loaded",
            manifest.len()
        )));
    }
    log::info!(
        "training on {} utterances ({} skipped) for {} updates",
        audio.len(),
        skipped.len(),
        cfg.total_steps
    );

    let mut trainer = Trainer::new(cfg.clone(), model_cfg, mel.clone())?;
    let initial_model = trainer.model().clone();

    let metrics_path = out_dir.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);

    let mut order_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut draw: u64 = 0;
    let mut records = Vec::with_capacity(cfg.total_steps);
    let mut checkpoints = Vec::new();

    for step in 1..=cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..audio.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        // Fresh perturbations every time an utterance is drawn.
        let first_draw = draw;
        draw += batch.len() as u64;
        let pairs: Vec<(Waveform, Waveform)> = batch
            .par_iter()
            .enumerate()
            .map(|(b, &i)| {
                let mut rng = perturbation_rng(perturb.seed, first_draw + b as u64);
                let p = make_perturbed(&audio[i], perturb, &mut rng)?;
                Ok((audio[i].clone(), p))
            })
            .collect::<Result<_>>()?;

        let rec = match trainer.train_batch(&pairs) {
            Ok(rec) => rec,
            Err(e) => {
                if let Some(fail) = trainer.last_failure() {
                    let (orig, pert) = &pairs[fail.index];
                    let stem = out_dir.join(format!("nonfinite_step{}_pair{}", fail.step, fail.index));
                    log::error!(
                        "non-finite loss on {} (k = {}); dumping pair to {}_*.wav",
                        sources[batch[fail.index]].display(),
                        fail.side,
                        stem.display()
                    );
                    save_wav(orig, stem.with_extension("original.wav"))?;
                    save_wav(pert, stem.with_extension("perturbed.wav"))?;
                }
                return Err(e);
            }
        };
        writeln!(metrics, "{}", rec.to_json_line()).map_err(|e| Error::io(&metrics_path, e))?;
        if step % CHECKPOINT_EVERY == 0 || step == cfg.total_steps {
            let p = out_dir.join(format!("checkpoint_step{step:06}.sckp"));
            write_checkpoint(&p, &trainer.model().learnable, &trainer.model().head)?;
            checkpoints.push(p);
        }
        if step % 50 == 0 {
            log::info!("step {step}: loss {:.6} lr {:.3e}", rec.loss, rec.lr);
        }
        records.push(rec);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    write_checkpoint(
        &final_checkpoint,
        &trainer.model().learnable,
        &trainer.model().head,
    )?;
    Ok(TrainingOutcome {
        records,
        initial_model,
        model: trainer.into_model(),
        metrics_path,
        checkpoints,
        final_checkpoint,
        skipped,
    })
}
