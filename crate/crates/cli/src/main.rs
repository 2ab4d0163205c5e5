//! `modal-panoptic` command line: synthetic data, targets, membership
//! training, inference, tracking, evaluation and reporting.

mod commands;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "modal-panoptic", version, about = "LiDAR panoptic segmentation and tracking pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; sequences are processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(commands::synth::SynthArgs),
    /// Dump BEV and membership targets plus class-mean extents.
    Targets(commands::targets::TargetsArgs),
    /// Train the membership MLP.
    TrainMem(commands::train::TrainArgs),
    /// Simulated detector, membership and fusion; writes per-sweep predictions.
    Infer(commands::infer::InferArgs),
    /// Replace per-sweep instance ids with track ids.
    Track(commands::track::TrackArgs),
    /// PQ, LSTQ, mIoU and membership accuracy of predictions against labels.
    Eval(commands::eval::EvalArgs),
    /// Comparison table and bar chart over several eval directories.
    Report(commands::report::ReportArgs),
}

/// 2 is reserved for usage errors, which clap reports itself.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<modal_panoptic::Error>() {
        Some(modal_panoptic::Error::MissingInput(_)) => 3,
        Some(e) if e.is_data_violation() => 4,
        Some(modal_panoptic::Error::Config(_)) | Some(modal_panoptic::Error::UnknownStrategy { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(&cli.global, a),
        Command::Targets(a) => commands::targets::run(&cli.global, a),
        Command::TrainMem(a) => commands::train::run(&cli.global, a),
        Command::Infer(a) => commands::infer::run(&cli.global, a),
        Command::Track(a) => commands::track::run(&cli.global, a),
        Command::Eval(a) => commands::eval::run(&cli.global, a),
        Command::Report(a) => commands::report::run(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
