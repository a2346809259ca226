//! Command-line surface for scene-lstm: training, evaluation, synthetic data,
//! gradient self-check, plot export and the desk-scale experiments.

mod commands;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scene_lstm::data::SceneKind;
use scene_lstm::model::ModelKind;
use scene_lstm::scenegrid::Variant;
use scene_lstm::train::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable consulted for the seed when neither the config file
/// nor `--seed` sets one.
pub const SEED_ENV: &str = "SCENE_LSTM_SEED";

/// Errors caused by the invocation rather than by the run itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "scene-lstm", version, about = "Scene-LSTM pedestrian trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a checkpoint (stage 1: leave-one-out pre-training; stage 2: fine-tuning).
    Train(TrainArgs),
    /// Forecast with a checkpoint or baseline and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Finite-difference check of every gradient on a toy network.
    Gradcheck(GradcheckArgs),
    /// Draw trajectories, forecasts and flagged grid cells as SVG + CSV.
    ExportPlot(PlotArgs),
    /// Fine-tune on growing shares of an unseen video and report ADE per share.
    SweepStage2(SweepArgs),
    /// Run one of the built-in synthetic experiments.
    Experiment(ExperimentArgs),
}

/// Hyperparameter sources shared by the training-related commands.
/// Precedence: defaults < `SCENE_LSTM_SEED` < config file < `--set` < named flags.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs for the stage being run.
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ConfigArgs {
    /// Resolves the configuration; `stage2` decides which epoch count
    /// `--epochs` overrides.
    pub fn resolve(&self, stage2: bool) -> anyhow::Result<TrainConfig> {
        self.resolve_with(std::env::var(SEED_ENV).ok(), stage2)
    }

    pub fn resolve_with(&self, env_seed: Option<String>, stage2: bool) -> anyhow::Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(raw) = env_seed {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(e) = self.epochs {
            if stage2 {
                cfg.epochs_stage2 = e;
            } else {
                cfg.epochs_stage1 = e;
            }
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Annotation files, one per video.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Stage 1: name (file stem) of the video to leave out, or `all` for every fold.
    #[arg(long)]
    pub held_out: Option<String>,
    /// Stage 1 with `--held-out all`: train the folds concurrently.
    #[arg(long)]
    pub parallel_folds: bool,
    /// Stage 2: checkpoint to fine-tune.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stage 2: leading share of the unseen video to train on.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Stage 2: only update scene and filter weights.
    #[arg(long)]
    pub freeze_pedestrian: bool,
    /// Output checkpoint; with `--held-out all` the fold name is appended to the stem.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Training log CSV (default: next to the checkpoint).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, conflicts_with_all = ["baseline", "oracle"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = ["linear"])]
    pub baseline: Option<String>,
    /// Predict the ground truth (harness sanity check).
    #[arg(long, conflicts_with = "baseline")]
    pub oracle: bool,
    /// Run the checkpoint as a different variant (hard filters recomputed).
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Zero scene memories before every test window.
    #[arg(long)]
    pub reset_per_window: bool,
    /// Decode by sampling instead of the mean.
    #[arg(long)]
    pub sample: bool,
    /// Trailing share of each video used for testing.
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    #[arg(long, default_value = "report.csv")]
    pub report: PathBuf,
    /// Prediction dump; with several videos one file per video is written.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scale the backward rule of one primitive (self-test of the checker).
    #[arg(long, hide = true, value_name = "OP")]
    pub inject_fault: Option<String>,
    #[arg(long, hide = true, default_value_t = 1.5)]
    pub fault_factor: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Prediction dump written by `evaluate --dump`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// The video the dump was produced from.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint providing the grid size and non-linear cell flags.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Geometry CSV (default: the SVG path with a .csv extension).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Stage-1 checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The unseen video.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExperimentKind {
    /// Scene-LSTM-n vs -a vs vanilla LSTM on a turning scene.
    SceneMemory,
    /// Fine-tuning data sweep on an unseen turning scene.
    Stage2Sweep,
    /// Repeated updates on one window.
    Overfit,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    #[arg(long, num_args = 1.., default_values_t = [1u64])]
    pub seeds: Vec<u64>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
