use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dlc_core::checkpoint::Checkpoint;
use dlc_core::metrics;
use dlc_core::Result;

use super::{ensure_dir, input_files, load_image};
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// First checkpoint (numerator of the reported ratio).
    #[arg(long)]
    pub checkpoint_a: PathBuf,
    /// Second checkpoint (denominator).
    #[arg(long)]
    pub checkpoint_b: PathBuf,
    /// Image file or directory to analyze.
    pub input: PathBuf,
    /// Output directory (correlation.csv plus feature-map PNGs).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ResolvedAnalyze {
    checkpoint_a: String,
    checkpoint_b: String,
}

pub fn run(args: AnalyzeArgs) -> Result<()> {
    let (ckpt_a, _) = Checkpoint::load(&args.checkpoint_a)?;
    let (ckpt_b, _) = Checkpoint::load(&args.checkpoint_b)?;
    ensure_dir(&args.out)?;

    let files = input_files(&args.input)?;
    let mut csv = String::from("image,correlation_sum_a,correlation_sum_b,ratio\n");
    let mut outputs = Vec::new();
    for path in &files {
        let image = load_image(path)?;
        let report = metrics::analyze_latents(&ckpt_a, &ckpt_b, &image)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{stem},{},{},{}\n",
            report.correlation_sum_a, report.correlation_sum_b, report.ratio
        ));
        let map_a = args.out.join(format!("{stem}_a.png"));
        let map_b = args.out.join(format!("{stem}_b.png"));
        metrics::save_feature_map(&report.feature_map_a, &map_a)?;
        metrics::save_feature_map(&report.feature_map_b, &map_b)?;
        log::info!(
            "{stem}: correlation sum {:.4} vs {:.4} (ratio {:.4})",
            report.correlation_sum_a,
            report.correlation_sum_b,
            report.ratio
        );
        outputs.push(map_a.display().to_string());
        outputs.push(map_b.display().to_string());
    }
    let csv_path = args.out.join("correlation.csv");
    std::fs::write(&csv_path, csv)?;
    outputs.push(csv_path.display().to_string());

    write_manifest(
        &args.out,
        "analyze",
        ResolvedAnalyze {
            checkpoint_a: args.checkpoint_a.display().to_string(),
            checkpoint_b: args.checkpoint_b.display().to_string(),
        },
        files.iter().map(|p| p.display().to_string()).collect(),
        outputs,
    )
}
