//! `dlc`: reproducible experiment workflows for the decorrelated learned
//! codec.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or configuration error.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

use dlc_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "dlc", version, about = "Learned image codec with latent decorrelation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on an image folder.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint over an image folder (rate, PSNR, MS-SSIM).
    Eval(commands::eval::EvalArgs),
    /// Compress images to .dlc bitstreams.
    Compress(commands::codecio::CompressArgs),
    /// Decompress .dlc bitstreams to PNG.
    Decompress(commands::codecio::DecompressArgs),
    /// Compare the latent channel correlation of two checkpoints.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Bjontegaard deltas between two R-D curve CSVs.
    Bdrate(commands::bdrate::BdrateArgs),
    /// Train/evaluate the rate grid and assemble R-D curves and BD tables.
    Sweep(commands::sweep::SweepArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Compress(args) => commands::codecio::run_compress(args),
        Command::Decompress(args) => commands::codecio::run_decompress(args),
        Command::Analyze(args) => commands::analyze::run(args),
        Command::Bdrate(args) => commands::bdrate::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

/// Usage and configuration problems exit 2; everything else is internal (1).
fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Config(_) | CoreError::Dataset(_) => 2,
        _ => 1,
    }
}
