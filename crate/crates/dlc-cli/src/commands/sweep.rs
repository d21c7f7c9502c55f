//! Rate-grid sweep: trains (or reuses) one model per rate weight, evaluates
//! them, assembles R-D curves and optionally computes Bjontegaard deltas
//! against baseline curves.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dlc_core::checkpoint::Checkpoint;
use dlc_core::metrics::{
    bd_quality, bd_rate, msssim_to_db, read_curve_csv, write_curve_csv, RdCurve,
};
use dlc_core::training::{self, LAMBDA_GRID};
use dlc_core::{Error, Result};

use super::{descriptor_for, ensure_dir, ConfigArgs};
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out images for the R-D points; defaults to the training data.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Comma-separated rate weights; defaults to the standard grid.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Use the real range coder for measured bpp.
    #[arg(long, default_value_t = false)]
    pub real_coder: bool,
    /// Baseline PSNR curve CSV (bpp,psnr_db) for BD computation.
    #[arg(long)]
    pub baseline_psnr_curve: Option<PathBuf>,
    /// Baseline MS-SSIM curve CSV (bpp,raw ms-ssim) for BD computation.
    #[arg(long)]
    pub baseline_msssim_curve: Option<PathBuf>,
    /// Retrain even when a checkpoint already exists in the output tree.
    #[arg(long, default_value_t = false)]
    pub retrain: bool,
}

#[derive(Serialize)]
struct ResolvedSweep {
    variant: String,
    lambdas: Vec<f64>,
    channels: usize,
    dataset: String,
    eval_data: String,
    real_coder: bool,
    warnings: Vec<String>,
}

/// Fixed column order of the BD summary table.
pub const BD_CSV_HEADER: &str =
    "variant,bd_rate_psnr_pct,bd_psnr_db,bd_rate_msssim_pct,bd_msssim_x100";

fn parse_lambdas(arg: &Option<String>) -> Result<Vec<f64>> {
    match arg {
        None => Ok(LAMBDA_GRID.to_vec()),
        Some(list) => list
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid lambda '{tok}'")))
            })
            .collect(),
    }
}

pub fn run(args: SweepArgs) -> Result<()> {
    let resolved = args.config.resolve()?;
    let lambdas = parse_lambdas(&args.lambdas)?;
    ensure_dir(&args.out)?;
    let eval_data = args.eval_data.clone().unwrap_or_else(|| resolved.dataset.clone());
    let mut warnings: Vec<String> = Vec::new();

    // One model per rate point.
    let mut psnr_points: Vec<(f64, f64)> = Vec::new();
    let mut msssim_points: Vec<(f64, f64)> = Vec::new();
    for &lambda in &lambdas {
        let run_dir = args.out.join(format!("lambda_{lambda}"));
        ensure_dir(&run_dir)?;
        let ckpt_path = run_dir.join("checkpoint.dlck");
        let mut cfg = resolved.rdo.clone();
        cfg.lambda_d = lambda;

        if !ckpt_path.exists() || args.retrain {
            log::info!("training lambda_d = {lambda} ({} steps)", cfg.steps);
            let report = training::train(
                &resolved.dataset,
                &cfg,
                descriptor_for(resolved.channels),
                &ckpt_path,
            );
            match report {
                Ok(r) => {
                    let json = serde_json::to_string_pretty(&r)?;
                    std::fs::write(run_dir.join("report.json"), json)?;
                }
                Err(e) => {
                    warnings.push(format!("lambda {lambda}: training failed: {e}"));
                    log::warn!("lambda {lambda}: training failed: {e}");
                    continue;
                }
            }
        } else {
            log::info!("reusing checkpoint for lambda_d = {lambda}");
        }

        let (ckpt, digest) = Checkpoint::load(&ckpt_path)?;
        let summary =
            dlc_core::metrics::evaluate_model(&ckpt, digest, &eval_data, args.real_coder)?;
        dlc_core::metrics::write_eval_csv(&summary, &run_dir.join("eval.csv"))?;
        let bpp = summary
            .mean_bpp_measured
            .unwrap_or(summary.mean_bpp_estimated);
        psnr_points.push((bpp, summary.mean_psnr_db));
        msssim_points.push((bpp, summary.mean_ms_ssim));
        log::info!(
            "lambda {lambda}: bpp {bpp:.4}, PSNR {:.2} dB, MS-SSIM {:.4}",
            summary.mean_psnr_db,
            summary.mean_ms_ssim
        );
    }

    if psnr_points.len() < lambdas.len() {
        warnings.push(format!(
            "partial grid: {} of {} rate points completed",
            psnr_points.len(),
            lambdas.len()
        ));
    }

    psnr_points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    msssim_points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Raw points always land on disk, even when curve validation refuses them.
    write_points(&args.out.join("points_psnr.csv"), &psnr_points)?;
    write_points(&args.out.join("points_msssim.csv"), &msssim_points)?;

    let variant = resolved.rdo.variant.to_string();
    let psnr_curve = match RdCurve::new(psnr_points.clone(), variant.clone()) {
        Ok(curve) => {
            write_curve_csv(&curve, &args.out.join("curve_psnr.csv"))?;
            Some(curve)
        }
        Err(e) => {
            warnings.push(format!("PSNR curve not usable for BD: {e}"));
            log::warn!("PSNR curve not usable for BD: {e}");
            None
        }
    };
    let msssim_curve_raw = match RdCurve::new(msssim_points.clone(), variant.clone()) {
        Ok(curve) => {
            write_curve_csv(&curve, &args.out.join("curve_msssim.csv"))?;
            let db_points: Vec<(f64, f64)> = curve
                .points
                .iter()
                .map(|&(b, q)| (b, msssim_to_db(q)))
                .collect();
            let db_curve = RdCurve::new(db_points, variant.clone())?;
            write_curve_csv(&db_curve, &args.out.join("curve_msssim_db.csv"))?;
            Some((curve, db_curve))
        }
        Err(e) => {
            warnings.push(format!("MS-SSIM curve not usable for BD: {e}"));
            log::warn!("MS-SSIM curve not usable for BD: {e}");
            None
        }
    };

    // BD table against the named baselines.
    if args.baseline_psnr_curve.is_some() || args.baseline_msssim_curve.is_some() {
        let mut row = vec![variant.clone()];
        match (&args.baseline_psnr_curve, &psnr_curve) {
            (Some(path), Some(test)) => {
                let reference = read_curve_csv(path, "baseline-psnr")?;
                row.push(format!("{}", bd_rate(&reference, test)?));
                row.push(format!("{}", bd_quality(&reference, test)?));
            }
            _ => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        match (&args.baseline_msssim_curve, &msssim_curve_raw) {
            (Some(path), Some((raw, db))) => {
                let baseline_raw = read_curve_csv(path, "baseline-msssim")?;
                let baseline_db_points: Vec<(f64, f64)> = baseline_raw
                    .points
                    .iter()
                    .map(|&(b, q)| (b, msssim_to_db(q)))
                    .collect();
                let baseline_db = RdCurve::new(baseline_db_points, "baseline-msssim-db")?;
                row.push(format!("{}", bd_rate(&baseline_db, db)?));
                row.push(format!("{}", 100.0 * bd_quality(&baseline_raw, raw)?));
            }
            _ => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        let csv = format!("{BD_CSV_HEADER}\n{}\n", row.join(","));
        std::fs::write(args.out.join("bd_summary.csv"), csv)?;
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    write_manifest(
        &args.out,
        "sweep",
        ResolvedSweep {
            variant,
            lambdas,
            channels: resolved.channels,
            dataset: resolved.dataset.display().to_string(),
            eval_data: eval_data.display().to_string(),
            real_coder: args.real_coder,
            warnings,
        },
        vec![resolved.dataset.display().to_string()],
        vec![args.out.join("curve_psnr.csv").display().to_string()],
    )
}

fn write_points(path: &std::path::Path, points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("bpp,quality\n");
    for (b, q) in points {
        out.push_str(&format!("{b},{q}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
