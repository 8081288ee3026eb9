use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softcorr::frontend::{save_wav, MelConfig};
use softcorr::model::{read_checkpoint, ModelConfig};
use softcorr::perturb::PerturbConfig;
use softcorr::synth::synthetic_corpus;
use softcorr::trainer::{load_manifest, run_training, TrainConfig};

fn write_corpus(dir: &Path, count: usize, seed: u64) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic_corpus(&mut rng, count, 16000)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (_, w))| {
            let p = dir.join(format!("utt{i:02}.wav"));
            save_wav(&w, &p).unwrap();
            p
        })
        .collect()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        dims: vec![40, 16, 16, 16],
        n_frozen: 1,
        projection_dim: 8,
        ..ModelConfig::default()
    }
}

fn small_config(steps: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        lr_base: 1e-3,
        warmup_steps: 0,
        total_steps: steps,
        batch_size: batch,
        ..TrainConfig::default()
    }
}

#[test]
fn single_step_run_writes_one_record_and_two_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), 1, 1);
    let out_dir = dir.path().join("out");
    let out = run_training(
        &files,
        &small_config(1, 1),
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &out_dir,
    )
    .unwrap();

    assert_eq!(out.records.len(), 1);
    let log = fs::read_to_string(&out.metrics_path).unwrap();
    assert_eq!(log.lines().count(), 1);
    let row: serde_json::Value = serde_json::from_str(log.trim()).unwrap();
    assert_eq!(row["step"], 1);
    assert!(row["k"] == 0 || row["k"] == 1);
    assert!(row["loss"].as_f64().unwrap() >= -1e-9);

    let mut written: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".sckp"))
        .collect();
    written.sort();
    assert_eq!(written, ["checkpoint_step000001.sckp", "final.sckp"]);
    // the payload is f32
    let (enc, head) = read_checkpoint(&out.final_checkpoint).unwrap();
    let stored = enc
        .layers()
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias));
    let live = out
        .model
        .learnable
        .layers()
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias));
    assert!(stored.zip(live).all(|(a, b)| *a == *b as f32 as f64));
    let stored = head.weight.as_slice().iter().chain(&head.bias);
    let live = out
        .model
        .head
        .weight
        .as_slice()
        .iter()
        .chain(&out.model.head.bias);
    assert!(stored.zip(live).all(|(a, b)| *a == *b as f32 as f64));
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), 6, 2);
    let run = |name: &str| {
        let out = run_training(
            &files,
            &small_config(8, 3),
            &PerturbConfig::default(),
            &MelConfig::default(),
            &small_model(),
            &dir.path().join(name),
        )
        .unwrap();
        (
            fs::read(&out.metrics_path).unwrap(),
            fs::read(&out.final_checkpoint).unwrap(),
        )
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first, second);

    let other_seed = run_training(
        &files,
        &TrainConfig {
            seed: 7,
            ..small_config(8, 3)
        },
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &dir.path().join("c"),
    )
    .unwrap();
    assert_ne!(fs::read(other_seed.metrics_path).unwrap(), first.0);
}

#[test]
fn frozen_parameters_survive_training() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), 4, 3);
    let out = run_training(
        &files,
        &small_config(6, 2),
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &dir.path().join("out"),
    )
    .unwrap();
    assert_eq!(
        out.initial_model.frozen_fingerprint(),
        out.model.frozen_fingerprint()
    );
    assert_eq!(out.initial_model.frozen, out.model.frozen);
    assert_ne!(out.initial_model.learnable, out.model.learnable);
    assert_ne!(out.initial_model.head, out.model.head);
    assert!(out.records.iter().all(|r| r.loss.is_finite() && r.loss >= -1e-9));
}

#[test]
fn unreadable_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = write_corpus(dir.path(), 2, 4);
    let junk = dir.path().join("junk.wav");
    fs::write(&junk, b"not audio").unwrap();
    files.push(junk.clone());
    files.push(dir.path().join("missing.wav"));
    let out = run_training(
        &files,
        &small_config(2, 2),
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &dir.path().join("out"),
    )
    .unwrap();
    assert_eq!(out.skipped, [junk, dir.path().join("missing.wav")]);
    assert_eq!(out.records.len(), 2);
}

#[test]
fn all_files_unreadable_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = vec![dir.path().join("a.wav"), dir.path().join("b.wav")];
    let err = run_training(
        &files,
        &small_config(2, 1),
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &dir.path().join("out"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("could be loaded"), "{err}");
}

#[test]
fn invalid_config_fails_before_touching_disk() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), 1, 5);
    let out_dir = dir.path().join("never");
    let bad = TrainConfig {
        warmup_steps: 10,
        ..small_config(2, 1)
    };
    let err = run_training(
        &files,
        &bad,
        &PerturbConfig::default(),
        &MelConfig::default(),
        &small_model(),
        &out_dir,
    )
    .unwrap_err();
    assert!(err.is_config());
    assert!(!out_dir.exists());
}

#[test]
fn manifest_paths_resolve_relative_to_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("lists");
    fs::create_dir(&sub).unwrap();
    let manifest = sub.join("train.txt");
    fs::write(&manifest, "../a.wav\n\n/abs/b.wav\n").unwrap();
    let entries = load_manifest(&manifest).unwrap();
    assert_eq!(entries, [sub.join("../a.wav"), PathBuf::from("/abs/b.wav")]);

    fs::write(&manifest, "x.wav\nx.wav\n").unwrap();
    assert!(load_manifest(&manifest).is_err());
    fs::write(&manifest, "\n\n").unwrap();
    assert!(load_manifest(&manifest).is_err());
}
