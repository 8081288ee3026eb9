//! `softcorr` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors (always
//! detected before any file is touched), 2 for runtime and data errors.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use softcorr::frontend::{load_wav, log_mel, save_wav, MelConfig};
use softcorr::fseq::{read_feature_file, write_feature_file};
use softcorr::model::{encode_layers, read_checkpoint, EncoderParams, ModelConfig};
use softcorr::perturb::{pitch_shift, speed_perturb, MAX_SEMITONES, SPEED_RANGE};
use softcorr::qbe::{rank_queries, read_labels};
use softcorr::softdtw::{divergence, soft_dtw_value, SoftDtwConfig};
use softcorr::trainer::{load_manifest, run_training};
use softcorr::FeatureSequence;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "softcorr",
    version,
    about = "Soft-DTW correspondence fine-tuning toolkit"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract log-mel features from a WAV file into an .fseq file.
    Features(FeaturesArgs),
    /// Soft-DTW value between two .fseq files.
    Softdtw(SoftDtwArgs),
    /// Speed-perturb and/or pitch-shift a WAV file.
    Perturb(PerturbArgs),
    /// Train the twin encoder on a manifest of WAV files.
    Train(TrainArgs),
    /// Query-by-example retrieval over directories of .fseq files.
    Qbe(QbeArgs),
}

#[derive(Debug, Args)]
struct MelArgs {
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    win_length: Option<usize>,
    #[arg(long)]
    hop_length: Option<usize>,
    #[arg(long)]
    n_fft: Option<usize>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    fmin: Option<f64>,
    #[arg(long)]
    fmax: Option<f64>,
    #[arg(long)]
    log_floor: Option<f64>,
}

impl MelArgs {
    fn to_config(&self) -> MelConfig {
        let d = MelConfig::default();
        MelConfig {
            sample_rate_hz: self.sample_rate.unwrap_or(d.sample_rate_hz),
            win_length_samples: self.win_length.unwrap_or(d.win_length_samples),
            hop_length_samples: self.hop_length.unwrap_or(d.hop_length_samples),
            n_fft: self.n_fft.unwrap_or(d.n_fft),
            n_mels: self.n_mels.unwrap_or(d.n_mels),
            fmin_hz: self.fmin.unwrap_or(d.fmin_hz),
            fmax_hz: self.fmax.unwrap_or(d.fmax_hz),
            log_floor: self.log_floor.unwrap_or(d.log_floor),
        }
    }
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[command(flatten)]
    mel: MelArgs,
}

#[derive(Debug, Args)]
struct SoftDtwArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    gamma: f64,
    /// Report L(a,b) - (L(a,a) + L(b,b)) / 2 instead of L(a,b).
    #[arg(long)]
    normalized: bool,
    /// Divide by the total length of both sequences.
    #[arg(long)]
    length_norm: bool,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    speed: f64,
    /// Pitch shift in semitones.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pitch: i32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Text file with one WAV path per line.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON config with optional `train`, `perturb` and `mel` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "out")]
    output: PathBuf,
    /// Override the number of updates; warmup is rescaled proportionally.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for initialization, shuffling, side draws and perturbations.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct QbeArgs {
    /// Directory of query .fseq files; ids are file stems.
    #[arg(long)]
    queries: PathBuf,
    /// Directory of document .fseq files; ids are file stems.
    #[arg(long)]
    docs: PathBuf,
    /// TSV of relevant `query_id<TAB>doc_id` pairs.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Score on learnable-encoder outputs from this checkpoint instead of raw features.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Encoder layer (1-based) whose output is scored; defaults to the top layer.
    #[arg(long, requires = "checkpoint")]
    layer: Option<usize>,
}

/// Error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Features(a) => features(a),
        Command::Softdtw(a) => softdtw(a),
        Command::Perturb(a) => perturb(a),
        Command::Train(a) => train(a),
        Command::Qbe(a) => qbe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn features(a: &FeaturesArgs) -> CmdResult {
    let mel = a.mel.to_config();
    mel.validate().map_err(usage)?;
    let w = load_wav(&a.input).map_err(runtime)?;
    let feats = log_mel(&w, &mel).map_err(runtime)?;
    write_feature_file(&feats, &a.output).map_err(runtime)?;
    log::info!(
        "{}: {} frames x {} mels",
        a.output.display(),
        feats.len(),
        feats.dim()
    );
    Ok(())
}

fn softdtw(a: &SoftDtwArgs) -> CmdResult {
    let cfg = SoftDtwConfig::with_gamma(a.gamma);
    cfg.validate().map_err(usage)?;
    let x = read_feature_file(&a.a).map_err(runtime)?;
    let y = read_feature_file(&a.b).map_err(runtime)?;
    let mut value = if a.normalized {
        divergence(&x, &y, &cfg).map_err(runtime)?.value
    } else {
        soft_dtw_value(&x, &y, &cfg).map_err(runtime)?
    };
    if a.length_norm {
        value /= (x.len() + y.len()) as f64;
    }
    println!("{value:?}");
    Ok(())
}

fn perturb(a: &PerturbArgs) -> CmdResult {
    let (lo, hi) = SPEED_RANGE;
    if !(a.speed > lo && a.speed < hi) {
        return Err(usage(anyhow!(
            "--speed must lie strictly between {lo} and {hi}, got {}",
            a.speed
        )));
    }
    if a.pitch.abs() > MAX_SEMITONES {
        return Err(usage(anyhow!(
            "--pitch must lie in [-{MAX_SEMITONES}, {MAX_SEMITONES}], got {}",
            a.pitch
        )));
    }
    let w = load_wav(&a.input).map_err(runtime)?;
    let w = speed_perturb(&w, a.speed).map_err(runtime)?;
    let w = pitch_shift(&w, a.pitch).map_err(runtime)?;
    save_wav(&w, &a.output).map_err(runtime)?;
    log::info!("{}: {:.3} s", a.output.display(), w.duration_s());
    Ok(())
}

fn train(a: &TrainArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    if a.steps == Some(0) {
        return Err(usage(anyhow!("--steps must be at least 1")));
    }
    let cfg = cfg.with_overrides(a.steps, Some(a.seed));
    cfg.validate().map_err(usage)?;
    let model = ModelConfig {
        dims: std::iter::once(cfg.mel.n_mels)
            .chain(ModelConfig::default().dims.into_iter().skip(1))
            .collect(),
        ..ModelConfig::default()
    };

    let manifest = load_manifest(&a.manifest).map_err(runtime)?;
    let out =
        run_training(&manifest, &cfg.train, &cfg.perturb, &cfg.mel, &model, &a.output).map_err(runtime)?;
    let last = out.records.last().map(|r| r.loss);
    let summary = serde_json::json!({
        "steps": out.records.len(),
        "final_loss": last,
        "skipped": out.skipped.len(),
        "metrics": out.metrics_path,
        "checkpoint": out.final_checkpoint,
    });
    println!("{summary}");
    Ok(())
}

fn load_feature_dir(dir: &Path, what: &str) -> anyhow::Result<BTreeMap<String, FeatureSequence>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {what} directory {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().and_then(|e| e.to_str()) != Some("fseq") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("{}: file name is not valid UTF-8", path.display()))?
            .to_owned();
        out.insert(id, read_feature_file(&path)?);
    }
    if out.is_empty() {
        bail!("no .fseq files in {what} directory {}", dir.display());
    }
    Ok(out)
}

fn encode_all(
    params: &EncoderParams,
    layer: usize,
    seqs: BTreeMap<String, FeatureSequence>,
) -> anyhow::Result<BTreeMap<String, FeatureSequence>> {
    seqs.into_iter()
        .map(|(id, s)| {
            let mut outputs = encode_layers(params, &s).with_context(|| format!("encoding {id}"))?;
            Ok((id, outputs.swap_remove(layer - 1)))
        })
        .collect()
}

fn qbe(a: &QbeArgs) -> CmdResult {
    if a.layer == Some(0) {
        return Err(usage(anyhow!("--layer is 1-based")));
    }
    let mut queries = load_feature_dir(&a.queries, "query").map_err(runtime)?;
    let mut docs = load_feature_dir(&a.docs, "document").map_err(runtime)?;
    let labels = read_labels(&a.labels).map_err(runtime)?;

    if let Some(path) = &a.checkpoint {
        let (encoder, _head) = read_checkpoint(path).map_err(runtime)?;
        let depth = encoder.layers().len();
        let layer = a.layer.unwrap_or(depth);
        if layer > depth {
            return Err(usage(anyhow!(
                "--layer {layer} exceeds the checkpoint's {depth} layers"
            )));
        }
        queries = encode_all(&encoder, layer, queries).map_err(runtime)?;
        docs = encode_all(&encoder, layer, docs).map_err(runtime)?;
    }

    let ranking = rank_queries(&queries, &docs, &labels).map_err(runtime)?;
    ranking.write_tsv(&a.output).map_err(runtime)?;
    println!("{}", serde_json::to_string(&ranking.metrics).map_err(runtime)?);
    Ok(())
}
