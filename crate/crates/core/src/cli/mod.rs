//! Command-line front end: `generate`, `train`, `eval` and `predict`.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::data::{generate_synthetic, read_feature_file, write_feature_file, DatasetManifest, Split, SyntheticConfig};
use crate::error::Error;
use crate::fa_block::FaVariant;
use crate::metrics::{export_pr_curve, pr_curve, probabilities_csv, ApMode, VideoScore};
use crate::model::{ExponentMode, Model, ModelConfig};
use crate::optimizer::{log_csv, train_with};
use crate::tensor::Real;

pub use config::{Precision, RunConfig};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "anticipate", version, about = "Accident anticipation from per-frame object features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate(GenerateArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on one split; writes pr_curve.csv and probabilities.csv.
    Eval(EvalArgs),
    /// Stream one feature file through a checkpoint frame by frame.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub pos: usize,
    #[arg(long)]
    pub neg: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub difficulty: f64,
    /// share of each class assigned to the test split
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 9)]
    pub objects: usize,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 90)]
    pub tau: usize,
    #[arg(long, default_value_t = 20.0)]
    pub fps: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` settings file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<FaVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_exponent)]
    pub loss_exponent: Option<ExponentMode>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// directory for the CSV outputs
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value = "interpolated", value_parser = parse_ap_mode)]
    pub ap_mode: ApMode,
    /// expected architecture; checked against the checkpoint
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<FaVariant>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value = "f32", value_parser = parse_precision)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value = "f32", value_parser = parse_precision)]
    pub precision: Precision,
}

fn parse_variant(s: &str) -> Result<FaVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_exponent(s: &str) -> Result<ExponentMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_ap_mode(s: &str) -> Result<ApMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (program name first) and runs the command; returns the
/// exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(Error::io("<stdout>", e)))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> CliResult {
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(CliError::Usage(format!("test fraction {} outside [0, 1]", a.test_fraction)));
    }
    let cfg = SyntheticConfig {
        count_pos: a.pos,
        count_neg: a.neg,
        frames: a.frames,
        n_objects: a.objects,
        dim: a.dim,
        fps: a.fps,
        tau: a.tau,
        seed: a.seed,
        difficulty: a.difficulty,
    };
    cfg.validate().map_err(usage)?;
    let videos = generate_synthetic(&cfg)?;
    create_dir(&a.out)?;

    let test_pos = (a.test_fraction * a.pos as f64).round() as usize;
    let test_neg = (a.test_fraction * a.neg as f64).round() as usize;
    let (mut seen_pos, mut seen_neg) = (0, 0);
    let mut manifest = DatasetManifest {
        comments: vec![format!(
            "synthetic seed={} difficulty={} pos={} neg={} frames={} objects={} dim={} fps={} tau={}",
            a.seed, a.difficulty, a.pos, a.neg, a.frames, a.objects, a.dim, a.fps, a.tau
        )],
        ..DatasetManifest::default()
    };
    for (i, v) in videos.iter().enumerate() {
        let name = PathBuf::from(format!("video_{i:05}.faab"));
        write_feature_file(v, a.out.join(&name))?;
        // the last `test_*` videos of each class form the test split
        let split = if v.label.is_positive() {
            seen_pos += 1;
            if seen_pos > a.pos - test_pos { Split::Test } else { Split::Train }
        } else {
            seen_neg += 1;
            if seen_neg > a.neg - test_neg { Split::Test } else { Split::Train }
        };
        manifest.entries.push((name, split));
    }
    let path = a.out.join(MANIFEST_NAME);
    manifest.save(&path)?;
    emit(
        out,
        &format!(
            "wrote {} videos ({} train, {} test) and {}\n",
            videos.len(),
            manifest.count(Split::Train),
            manifest.count(Split::Test),
            path.display()
        ),
    )
}

/// Effective run settings from the config file and flags.
pub fn train_settings(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(p) = &a.config {
        rc.apply_file(p).map_err(usage)?;
    }
    let flags: [(&str, Option<String>); 12] = [
        ("data", a.data.as_ref().map(|p| p.display().to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("variant", a.variant.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("loss_exponent", a.loss_exponent.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("hidden", a.hidden.map(|v| v.to_string())),
        ("clip", a.clip.map(|v| v.to_string())),
        ("precision", a.precision.map(|v| v.to_string())),
        ("checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            rc.set(k, &v).map_err(usage)?;
        }
    }
    Ok(rc)
}

fn load_split(manifest_path: &Path, split: Split) -> CliResult<Vec<(String, crate::VideoSample)>> {
    let manifest = DatasetManifest::load(manifest_path)
        .map_err(|e| Error::Config(format!("cannot read data manifest {}: {e}", manifest_path.display())))?;
    let videos = manifest
        .load_named(split)
        .map_err(|e| Error::Config(format!("data manifest {}: {e}", manifest_path.display())))?;
    if videos.is_empty() {
        return Err(Error::Config(format!("data manifest {} lists no {split} videos", manifest_path.display())).into());
    }
    Ok(videos)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut rc = train_settings(a)?;
    let data = rc
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no data manifest given (use --data or `data =` in the config file)".into()))?;
    let out_dir = rc.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let videos: Vec<_> = load_split(&data, Split::Train)?.into_iter().map(|(_, v)| v).collect();
    let first = &videos[0];
    rc.train.d = first.dim;
    rc.train.n_objects = first.n_objects;
    rc.train.hidden = rc.hidden.unwrap_or(2 * first.dim);
    rc.out = Some(out_dir.clone());
    rc.train.validate().map_err(usage)?;

    create_dir(&out_dir)?;
    let echo = rc.to_text();
    fs::write(out_dir.join("config.txt"), &echo).map_err(|e| Error::io(out_dir.join("config.txt"), e))?;
    emit(out, &format!("# effective config\n{echo}"))?;
    emit(
        out,
        &format!("# {} train videos, d = {}, N = {}\n", videos.len(), first.dim, first.n_objects),
    )?;
    match rc.precision {
        Precision::F32 => train_run::<f32>(&rc, &videos, &out_dir, out),
        Precision::F64 => train_run::<f64>(&rc, &videos, &out_dir, out),
    }
}

fn train_run<T: Real>(rc: &RunConfig, videos: &[crate::VideoSample], dir: &Path, out: &mut dyn Write) -> CliResult {
    let every = rc.checkpoint_every;
    let outcome = train_with::<T, _>(videos, &rc.train, |e, m| {
        let _ = writeln!(out, "epoch {} loss {:.6} ({:.1} s)", e.epoch, e.mean_loss, e.wall_seconds);
        if every > 0 && e.epoch % every == 0 {
            checkpoint::save(m, dir.join(format!("checkpoint_epoch{:04}.ckpt", e.epoch)))?;
        }
        Ok(())
    })?;
    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&outcome.model, &ckpt)?;
    let log = dir.join("loss.csv");
    fs::write(&log, log_csv(&outcome.log)).map_err(|e| Error::io(&log, e))?;
    emit(
        out,
        &format!(
            "parameters {}\nwrote {} and {}\n",
            outcome.model.param_count(),
            ckpt.display(),
            log.display()
        ),
    )
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let videos = load_split(&a.data, a.split)?;
    match a.precision {
        Precision::F32 => eval_run::<f32>(a, &videos, out),
        Precision::F64 => eval_run::<f64>(a, &videos, out),
    }
}

fn load_model<T: Real>(path: &Path, variant: Option<FaVariant>, hidden: Option<usize>, sample: &crate::VideoSample) -> CliResult<Model<T>> {
    if variant.is_none() && hidden.is_none() {
        let model = checkpoint::load::<T>(path)?;
        let c = &model.config;
        if c.d != sample.dim || c.n_objects != sample.n_objects {
            return Err(Error::Checkpoint {
                layer: "fa.w_u".into(),
                detail: format!("checkpoint expects d = {}, N = {}; data has d = {}, N = {}", c.d, c.n_objects, sample.dim, sample.n_objects),
            }
            .into());
        }
        return Ok(model);
    }
    let mut expected = ModelConfig::new(sample.dim, sample.n_objects, variant.unwrap_or_default());
    if let Some(h) = hidden {
        expected.hidden = h;
    }
    Ok(checkpoint::load_for::<T>(path, &expected)?)
}

fn eval_run<T: Real>(a: &EvalArgs, videos: &[(String, crate::VideoSample)], out: &mut dyn Write) -> CliResult {
    let model = load_model::<T>(&a.checkpoint, a.variant, a.hidden, &videos[0].1)?;
    let mut scores = Vec::with_capacity(videos.len());
    let mut rows = Vec::with_capacity(videos.len());
    for (name, v) in videos {
        let probs: Vec<f64> = model.accident_probs(v)?.iter().map(|p| p.as_f64()).collect();
        scores.push(VideoScore::new(probs.clone(), v.label, v.tau, v.fps as f64));
        rows.push((name.clone(), probs));
    }
    let curve = pr_curve(&scores, a.ap_mode)?;
    create_dir(&a.out)?;
    export_pr_curve(&curve, a.out.join("pr_curve.csv"))?;
    let probs_path = a.out.join("probabilities.csv");
    fs::write(&probs_path, probabilities_csv(&rows)).map_err(|e| Error::io(&probs_path, e))?;
    emit(out, &format!("videos {}\nmAP {:.4}\nATTA {:.3} s\n", videos.len(), curve.map, curve.atta))
}

pub fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> CliResult {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("threshold {} outside [0, 1]", a.threshold)));
    }
    let sample = read_feature_file(&a.input)?;
    match a.precision {
        Precision::F32 => predict_run::<f32>(a, &sample, out),
        Precision::F64 => predict_run::<f64>(a, &sample, out),
    }
}

fn predict_run<T: Real>(a: &PredictArgs, sample: &crate::VideoSample, out: &mut dyn Write) -> CliResult {
    let model = load_model::<T>(&a.checkpoint, None, None, sample)?;
    let mut stream = model.stream();
    let mut alarm = false;
    let mut text = String::from("frame,probability,alarm\n");
    for t in 1..=sample.frames {
        let p = stream.push_sample_frame(sample, t)?.as_f64();
        alarm |= p >= a.threshold;
        text.push_str(&format!("{t},{p},{}\n", u8::from(alarm)));
    }
    emit(out, &text)
}
