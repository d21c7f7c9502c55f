use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dlc_core::checkpoint::Checkpoint;
use dlc_core::metrics;
use dlc_core::Result;

use super::ensure_dir;
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of evaluation images.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (eval.csv, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the real range coder and report measured bpp.
    #[arg(long, default_value_t = false)]
    pub real_coder: bool,
}

#[derive(Serialize)]
struct ResolvedEval {
    checkpoint: String,
    data: String,
    real_coder: bool,
    lambda_d: f64,
    variant: String,
    seed: u64,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let (ckpt, digest) = Checkpoint::load(&args.checkpoint)?;
    ensure_dir(&args.out)?;
    let summary = metrics::evaluate_model(&ckpt, digest, &args.data, args.real_coder)?;
    let csv_path = args.out.join("eval.csv");
    metrics::write_eval_csv(&summary, &csv_path)?;

    log::info!(
        "evaluated {} images: mean bpp {:.4}{}, mean PSNR {:.2} dB, mean MS-SSIM {:.4}",
        summary.per_image.len(),
        summary.mean_bpp_estimated,
        summary
            .mean_bpp_measured
            .map(|m| format!(" (measured {m:.4})"))
            .unwrap_or_default(),
        summary.mean_psnr_db,
        summary.mean_ms_ssim
    );
    for skipped in &summary.skipped {
        log::warn!("skipped unreadable image {skipped}");
    }

    write_manifest(
        &args.out,
        "eval",
        ResolvedEval {
            checkpoint: args.checkpoint.display().to_string(),
            data: args.data.display().to_string(),
            real_coder: args.real_coder,
            lambda_d: ckpt.config.lambda_d,
            variant: ckpt.config.variant.to_string(),
            seed: ckpt.config.seed,
        },
        vec![
            args.checkpoint.display().to_string(),
            args.data.display().to_string(),
        ],
        vec![csv_path.display().to_string()],
    )
}
