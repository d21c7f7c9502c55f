use std::path::PathBuf;

use clap::Args;

use dlc_core::checkpoint::Checkpoint;
use dlc_core::training;
use dlc_core::Result;

use super::{descriptor_for, ensure_dir, ConfigArgs};
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (checkpoint.dlck, report.json, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from an existing checkpoint with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let resolved = args.config.resolve()?;
    ensure_dir(&args.out)?;
    let descriptor = descriptor_for(resolved.channels);

    let start = match &args.resume {
        Some(path) => Some(Checkpoint::load(path)?.0),
        None => None,
    };

    let ckpt_path = args.out.join("checkpoint.dlck");
    let report = training::train_with_start(
        &resolved.dataset,
        &resolved.rdo,
        descriptor,
        start,
        &ckpt_path,
    )?;

    let report_json = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join("report.json"), report_json)?;

    log::info!(
        "trained {} steps: smoothed loss {:.5} -> {:.5}",
        report.steps_run,
        report.initial_smoothed_loss,
        report.final_smoothed_loss
    );

    write_manifest(
        &args.out,
        "train",
        &resolved,
        vec![resolved.dataset.display().to_string()],
        vec![
            ckpt_path.display().to_string(),
            args.out.join("report.json").display().to_string(),
        ],
    )
}
