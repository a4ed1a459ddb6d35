//! `stpn`: synthetic data, training, localization, evaluation and reports for
//! sparse temporal pooling networks.
//!
//! Exit codes: 0 success, 1 usage or invalid flag value, 2 data error.

mod commands;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use stpn_core::data::Stream;

#[derive(Parser, Debug)]
#[command(name = "stpn", version)]
#[command(about = "Weakly supervised temporal action localization with sparse temporal pooling")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted action intervals
    Synth(SynthArgs),
    /// Train one stream from video-level labels
    Train(TrainArgs),
    /// Localize actions with a pair of trained streams
    Localize(LocalizeArgs),
    /// Score detections against ground truth (AP / mAP per IoU threshold)
    Eval(EvalArgs),
    /// Render loss curves, mAP-vs-IoU tables and attention traces
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (manifest.json and features/)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub videos: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    /// Raw segments per video
    #[arg(long, default_value_t = 100)]
    pub raw_t: usize,
    /// Upper bound on planted actions per video
    #[arg(long, default_value_t = 2)]
    pub actions_per_video: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, env = "STPN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub stream: Stream,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Sparsity weight
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Segments sampled per video
    #[arg(long, default_value_t = 400)]
    pub t_out: usize,
    #[arg(long, default_value_t = stpn_core::model::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, env = "STPN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also write the per-epoch CSV to this file
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// RGB checkpoint
    #[arg(long)]
    pub rgb: PathBuf,
    /// Flow checkpoint
    #[arg(long)]
    pub flow: PathBuf,
    /// RGB weight in the two-stream fusion
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Threshold on the weighted T-CAM
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    /// Interpolation factor between sampled segments
    #[arg(long, default_value_t = 4)]
    pub interp: usize,
    /// Classes with fused video probability below this are dropped
    #[arg(long, default_value_t = 0.1)]
    pub class_reject: f64,
    /// Segments sampled per video; should match training
    #[arg(long, default_value_t = 400)]
    pub t_out: usize,
    /// Detection CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-video weighted T-CAM traces
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// Comma-separated IoU thresholds
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub iou: String,
    /// Report CSV
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding training logs, eval reports and traces
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Output directory [default: <run-dir>/report]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth(&args),
        Command::Train(args) => commands::train(&args),
        Command::Localize(args) => commands::localize(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Report(args) => report::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

/// Error chain on one line. Library errors already embed their source in the
/// message, so causes repeated verbatim are dropped.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let part = cause.to_string();
        if text.ends_with(&part) {
            continue;
        }
        if !text.is_empty() {
            text.push_str(": ");
        }
        text.push_str(&part);
    }
    text
}
