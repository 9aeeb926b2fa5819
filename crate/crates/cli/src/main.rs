//! `msplic` command-line front end.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "MSPLIC_THREADS";

#[derive(Parser, Debug)]
#[command(name = "msplic", version, about = "Learned image codec with a multi-scale progressive probability model")]
pub struct Cli {
    /// Worker threads for commands that process several images.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a folder of PNG/PPM images.
    Train(TrainArgs),
    /// Compress one image.
    Encode(EncodeArgs),
    /// Compress one image with latent overfitting.
    LofEncode(EncodeArgs),
    /// Reconstruct an image from a bitstream.
    Decode(DecodeArgs),
    /// Encode and decode a folder, reporting rate and quality.
    Eval(EvalArgs),
    /// Time the decode schedule of a profile.
    Bench(BenchArgs),
    /// Latent channel energy shares and correlations as CSV.
    Stats(StatsArgs),
    /// Bjontegaard delta rate between two RD curves.
    Bdrate(BdrateArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// baseline, normal, extra or s:BRxBC:a:filters.
    #[arg(short, long, default_value = "baseline")]
    pub profile: String,
    #[arg(long, conflicts_with = "lambda_index")]
    pub lambda: Option<f64>,
    /// Index into the seven-point lambda ladder.
    #[arg(long)]
    pub lambda_index: Option<usize>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Latent channels.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Filters of the analysis and synthesis transforms.
    #[arg(long, default_value_t = 64)]
    pub filters: usize,
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save to the output path every this many steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Args, Debug)]
pub struct LofArgs {
    /// Overfit the latent before coding.
    #[arg(long)]
    pub lof: bool,
    #[arg(long, default_value_t = 0.1)]
    pub lof_lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub lof_iters: usize,
    #[arg(long, default_value_t = 20)]
    pub lof_patience: usize,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Expected profile; encoding fails if the model uses another one.
    #[arg(short, long)]
    pub profile: Option<String>,
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub lof: LofArgs,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write a JSON report with per-image results.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Add this model's mean RD point to a CSV curve (created if missing).
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub lof: LofArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(short, long, default_value = "extra")]
    pub profile: String,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "512x512")]
    pub size: String,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Transform filters of the randomly initialised bench model.
    #[arg(long, default_value_t = 16)]
    pub filters: usize,
    /// Parameter-network filters; defaults to the profile's.
    #[arg(long)]
    pub hp_filters: Option<usize>,
    /// Benchmark this model instead of a random one.
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    /// Only print the schedule, without running it.
    #[arg(long)]
    pub units_only: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Channels included in the correlation matrix.
    #[arg(long, default_value_t = 32)]
    pub top: usize,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BdrateArgs {
    #[arg(long)]
    pub anchor: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
