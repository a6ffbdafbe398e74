//! `pkws`: personalized keyword spotting pipelines.
//!
//! Every subcommand writes its outputs plus a `run_config.toml` with the
//! fully resolved arguments into `--out`. Exit codes: 0 success, 2 config
//! error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pkws::exec::Exec;

#[derive(Debug, Parser)]
#[command(
    name = "pkws",
    version,
    about = "Personalized keyword spotting: data, training, adaptation and evaluation"
)]
struct Cli {
    /// TOML file with default arguments (top-level keys or a `[<subcommand>]`
    /// table); flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (WAV files + manifest) and a test stream.
    Synth(SynthArgs),
    /// Build a manifest from a Speech Commands v1 directory.
    IngestGsc(IngestArgs),
    /// Sample keyword and speaker-verification evaluation pairs.
    Pairs(PairsArgs),
    /// Train the multi-task keyword/speaker model.
    Train(TrainArgs),
    /// Grid-search the score-combination weight on validation pairs.
    TuneScm(TuneScmArgs),
    /// Train the task representation module on a frozen model.
    AdaptTrm(AdaptTrmArgs),
    /// Compute and store a speaker's reference embedding.
    Enroll(EnrollArgs),
    /// Pair evaluation of every task and mechanism.
    Eval(EvalArgs),
    /// False alarms on a continuous stream of non-enrolled speakers.
    EvalStream(EvalStreamArgs),
    /// Parameter counts of a checkpoint.
    ModelInfo(ModelInfoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    Tb,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureArg {
    LogMel,
    Mfcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnrollmentArg {
    /// The pair's anchor utterance.
    Anchor,
    /// Other clips of the anchor's speaker (see --enrollment-clips).
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateArg {
    PerDimension,
    PerEmbedding,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 80)]
    pub speakers: usize,
    /// Command keyword classes.
    #[arg(long, default_value_t = 6)]
    pub keywords: usize,
    /// Extra words labeled `Unknown`.
    #[arg(long, default_value_t = 2)]
    pub unknown_words: usize,
    #[arg(long, default_value_t = 3)]
    pub utterances_per_pair: usize,
    /// Held-out speakers (default 10% / 20% of --speakers).
    #[arg(long)]
    pub validation_speakers: Option<usize>,
    #[arg(long)]
    pub test_speakers: Option<usize>,
    /// Skip the noise-only `Silence` clips.
    #[arg(long)]
    pub no_silence: bool,
    #[arg(long, default_value_t = 0.003)]
    pub noise_level: f64,
    /// One-second segments in stream.wav (0 = no stream).
    #[arg(long, default_value_t = 300)]
    pub stream_segments: usize,
    /// Non-corpus speakers talking in the stream.
    #[arg(long, default_value_t = 8)]
    pub stream_speakers: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Extracted dataset directory (one folder per word).
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PairsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    /// Keyword pairs per split (a multiple of 4).
    #[arg(long, default_value_t = 1600)]
    pub pairs_per_split: usize,
    /// Speaker-verification pairs per split (0 = none).
    #[arg(long, default_value_t = 1600)]
    pub sv_pairs_per_split: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the speaker loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Convolution channels of the default encoder.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, value_enum, default_value_t = FeatureArg::LogMel)]
    pub features: FeatureArg,
    /// Speaker-verification pairs for model selection (0 = keep the last epoch).
    #[arg(long, default_value_t = 1600)]
    pub validation_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TuneScmArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Keyword pairs over the validation split.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0.01)]
    pub target_far: f64,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long, value_enum, default_value_t = EnrollmentArg::Anchor)]
    pub enrollment: EnrollmentArg,
    #[arg(long, default_value_t = 1)]
    pub enrollment_clips: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AdaptTrmArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Rows per batch (TB needs at least this many command keywords).
    #[arg(long, default_value_t = 6)]
    pub rows: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// TO batches: target share of same-keyword negatives.
    #[arg(long, default_value_t = 0.5)]
    pub same_keyword_target: f64,
    /// Chance that a batch row reuses a speaker already in the batch.
    #[arg(long, default_value_t = 0.5)]
    pub speaker_reuse: f64,
    #[arg(long, value_enum, default_value_t = GateArg::PerDimension)]
    pub gate: GateArg,
    #[arg(long, default_value_t = 2)]
    pub reduction: usize,
    /// Validation keyword pairs for epoch selection.
    #[arg(long)]
    pub val_pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EnrollmentArg::Anchor)]
    pub enrollment: EnrollmentArg,
    #[arg(long, default_value_t = 1)]
    pub enrollment_clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EnrollArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub speaker: String,
    /// Utterance ids to enroll with (default: all of the speaker's clips).
    #[arg(long = "clip")]
    pub clips: Vec<String>,
    #[arg(long)]
    pub max_clips: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Keyword pairs over the test split.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub sv_pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scm_tb: Option<PathBuf>,
    #[arg(long)]
    pub scm_to: Option<PathBuf>,
    #[arg(long)]
    pub trm_tb: Option<PathBuf>,
    #[arg(long)]
    pub trm_to: Option<PathBuf>,
    /// Blend weight of the untuned combination row.
    #[arg(long, default_value_t = 0.5)]
    pub manual_alpha: f64,
    #[arg(long, value_enum, default_value_t = EnrollmentArg::Anchor)]
    pub enrollment: EnrollmentArg,
    #[arg(long, default_value_t = 1)]
    pub enrollment_clips: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalStreamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Validation keyword pairs; thresholds come from their ts-tk scores.
    #[arg(long)]
    pub val_pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scm_to: Option<PathBuf>,
    #[arg(long)]
    pub trm_to: Option<PathBuf>,
    /// Enrollment file from `enroll`, used for every keyword. Default: one
    /// random test-split speaker per keyword.
    #[arg(long)]
    pub enrollment_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05])]
    pub frr_targets: Vec<f64>,
    #[arg(long, value_enum, default_value_t = EnrollmentArg::Anchor)]
    pub enrollment: EnrollmentArg,
    #[arg(long, default_value_t = 1)]
    pub enrollment_clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelInfoArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Attention-module checkpoints to count as well.
    #[arg(long = "trm")]
    pub trms: Vec<PathBuf>,
    /// Also write model_info.txt and the run config here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run() -> error::CliResult<()> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let cfg = cli.config.as_deref();
    macro_rules! go {
        ($args:expr, $f:path) => {
            $f(config::layer($args, sub, name, cfg)?, exec)
        };
    }
    match cli.command {
        Command::Synth(a) => go!(a, commands::synth),
        Command::IngestGsc(a) => go!(a, commands::ingest_gsc),
        Command::Pairs(a) => go!(a, commands::pairs),
        Command::Train(a) => go!(a, commands::train),
        Command::TuneScm(a) => go!(a, commands::tune_scm),
        Command::AdaptTrm(a) => go!(a, commands::adapt_trm),
        Command::Enroll(a) => go!(a, commands::enroll),
        Command::Eval(a) => go!(a, commands::eval),
        Command::EvalStream(a) => go!(a, commands::eval_stream),
        Command::ModelInfo(a) => go!(a, commands::model_info),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
