//! Quality/rate metrics, R-D curve assembly, Bjøntegaard deltas and the
//! latent-correlation analysis used to compare trained models.

pub mod bd;
pub mod msssim;

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};

use crate::checkpoint::Checkpoint;
use crate::codec;
use crate::coding;
use crate::decorrelation;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor};

pub use bd::{bd_quality, bd_rate, RdCurve};
pub use msssim::{ms_ssim, msssim_to_db, MsSsim};

/// PSNR ceiling standing in for the infinite value of identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for `[0, 1]` images (peak 1.0), capped
/// at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    let mse = a
        .view()
        .iter()
        .zip(b.view().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.view().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Per-image evaluation record.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub file: String,
    pub width: usize,
    pub height: usize,
    /// Model-estimated bits per pixel (interval masses).
    pub bpp_estimated: f64,
    /// Real coded file size in bits per pixel, when requested.
    pub bpp_measured: Option<f64>,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub msssim_scales: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_image: Vec<ImageEval>,
    pub mean_bpp_estimated: f64,
    pub mean_bpp_measured: Option<f64>,
    pub mean_psnr_db: f64,
    pub mean_ms_ssim: f64,
    /// Unreadable files, skipped with a warning.
    pub skipped: Vec<String>,
}

/// Eval-mode forward pass of one image: quantized latents, estimated rate
/// and the reconstruction.
pub struct EvalForward {
    pub bits_estimated: f64,
    pub reconstruction: ImageTensor,
    pub y_hat: LatentTensor,
    pub z_hat: LatentTensor,
}

pub fn eval_forward(x: &ImageTensor, ckpt: &Checkpoint) -> Result<EvalForward> {
    let params = &ckpt.params;
    let (orig_h, orig_w) = (x.height(), x.width());
    let (padded, _) = codec::pad_to_multiple(x, params.divisibility());
    let y = codec::analyze(&padded, params)?;
    let z = codec::hyper_analyze(&y, params)?;
    let z_hat = codec::quantize_eval(&z);
    let ep = codec::hyper_synthesize(&z_hat, params)?;
    let y_hat = codec::quantize_eval(&y);
    let bits = codec::rate_y(&y_hat, &ep)? + codec::rate_z(&z_hat, params)?;
    let recon = codec::synthesize(&y_hat, params)?;
    let reconstruction = codec::crop_to(&recon, orig_h, orig_w);
    Ok(EvalForward { bits_estimated: bits, reconstruction, y_hat, z_hat })
}

fn load_image_tensor(path: &Path) -> Result<ImageTensor> {
    let arr = crate::training::dataset::decode_image(path)?;
    let (c, h, w) = arr.dim();
    let mut out = Array4::zeros((1, c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[0, ci, i, j]] = arr[[ci, i, j]];
            }
        }
    }
    ImageTensor::new(out)
}

/// Evaluates a checkpoint over every decodable image in a directory,
/// in filename order.
pub fn evaluate_model(
    ckpt: &Checkpoint,
    digest: [u8; 32],
    image_dir: &Path,
    use_real_coder: bool,
) -> Result<EvalSummary> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(image_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!(
            "no files in {}",
            image_dir.display()
        )));
    }

    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    let lambda_idx = coding::lambda_index(ckpt.config.lambda_d);
    for path in &paths {
        let x = match load_image_tensor(path) {
            Ok(x) => x,
            Err(_) => {
                log::warn!("skipping unreadable image {}", path.display());
                skipped.push(path.display().to_string());
                continue;
            }
        };
        let fwd = eval_forward(&x, ckpt)?;
        let pixels = (x.height() * x.width()) as f64;
        let bpp_estimated = fwd.bits_estimated / pixels;
        let bpp_measured = if use_real_coder {
            let stream = coding::encode_image(&x, &ckpt.params, digest, lambda_idx)?;
            Some(stream.bpp())
        } else {
            None
        };
        let psnr_db = psnr(&x, &fwd.reconstruction)?;
        let ms = ms_ssim(&x, &fwd.reconstruction)?;
        per_image.push(ImageEval {
            file: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            width: x.width(),
            height: x.height(),
            bpp_estimated,
            bpp_measured,
            psnr_db,
            ms_ssim: ms.value,
            ms_ssim_db: msssim_to_db(ms.value),
            msssim_scales: ms.scales_used,
        });
    }
    if per_image.is_empty() {
        return Err(Error::Dataset("no decodable image in directory".into()));
    }

    let n = per_image.len() as f64;
    let mean_bpp_estimated = per_image.iter().map(|e| e.bpp_estimated).sum::<f64>() / n;
    let mean_bpp_measured = if use_real_coder {
        Some(per_image.iter().filter_map(|e| e.bpp_measured).sum::<f64>() / n)
    } else {
        None
    };
    let mean_psnr_db = per_image.iter().map(|e| e.psnr_db).sum::<f64>() / n;
    let mean_ms_ssim = per_image.iter().map(|e| e.ms_ssim).sum::<f64>() / n;

    Ok(EvalSummary {
        per_image,
        mean_bpp_estimated,
        mean_bpp_measured,
        mean_psnr_db,
        mean_ms_ssim,
        skipped,
    })
}

/// Latent-correlation comparison of two models on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub correlation_sum_a: f64,
    pub correlation_sum_b: f64,
    /// `a / b`; below 1 means model A carries less channel redundancy.
    pub ratio: f64,
    /// Channel-summed latent of model A, latent spatial resolution.
    pub feature_map_a: Array2<f64>,
    pub feature_map_b: Array2<f64>,
}

pub fn analyze_latents(
    ckpt_a: &Checkpoint,
    ckpt_b: &Checkpoint,
    image: &ImageTensor,
) -> Result<CorrelationReport> {
    if ckpt_a.params.descriptor != ckpt_b.params.descriptor {
        return Err(Error::Checkpoint(
            "architecture mismatch between the two checkpoints".into(),
        ));
    }
    if image.batch() != 1 {
        return Err(Error::InvalidTensor("analyze one image at a time".into()));
    }
    let (padded, _) = codec::pad_to_multiple(image, ckpt_a.params.divisibility());
    let y_a = codec::analyze(&padded, &ckpt_a.params)?;
    let y_b = codec::analyze(&padded, &ckpt_b.params)?;
    let correlation_sum_a = decorrelation::correlation_sum(&y_a)?;
    let correlation_sum_b = decorrelation::correlation_sum(&y_b)?;
    let ratio = if correlation_sum_b == 0.0 {
        if correlation_sum_a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        correlation_sum_a / correlation_sum_b
    };
    Ok(CorrelationReport {
        correlation_sum_a,
        correlation_sum_b,
        ratio,
        feature_map_a: channel_sum(&y_a),
        feature_map_b: channel_sum(&y_b),
    })
}

/// Sum over channels of a single-image latent.
pub fn channel_sum(y: &LatentTensor) -> Array2<f64> {
    let (_, c, h, w) = y.dim();
    let v = y.view();
    let mut out = Array2::zeros((h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[i, j]] += v[[0, ci, i, j]];
            }
        }
    }
    out
}

/// Writes a feature map as an 8-bit grayscale PNG, min-max normalized.
pub fn save_feature_map(map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in map.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let v = ((map[[i, j]] - lo) / span * 255.0).round() as u8;
            img.put_pixel(j as u32, i as u32, image::Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Curve CSV: header `bpp,quality`, one point per line.
pub fn write_curve_csv(curve: &RdCurve, path: &Path) -> Result<()> {
    let mut out = String::from("bpp,quality\n");
    for (b, q) in &curve.points {
        out.push_str(&format!("{b},{q}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_curve_csv(path: &Path, label: &str) -> Result<RdCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let a = parts.next().unwrap_or("").trim();
        let b = parts.next().unwrap_or("").trim();
        let (Ok(bpp), Ok(quality)) = (a.parse::<f64>(), b.parse::<f64>()) else {
            if lineno == 0 {
                continue; // header
            }
            return Err(Error::Curve(format!(
                "{}: line {} is not 'bpp,quality'",
                path.display(),
                lineno + 1
            )));
        };
        points.push((bpp, quality));
    }
    RdCurve::new(points, label)
}

/// Per-image evaluation CSV with a fixed column order; the final row holds
/// the aggregate means.
pub const EVAL_CSV_HEADER: &str =
    "file,width,height,bpp_estimated,bpp_measured,psnr_db,ms_ssim,ms_ssim_db,msssim_scales";

pub fn write_eval_csv(summary: &EvalSummary, path: &Path) -> Result<()> {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    let fmt_measured =
        |m: Option<f64>| m.map(|v| format!("{v}")).unwrap_or_default();
    for e in &summary.per_image {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            e.file,
            e.width,
            e.height,
            e.bpp_estimated,
            fmt_measured(e.bpp_measured),
            e.psnr_db,
            e.ms_ssim,
            e.ms_ssim_db,
            e.msssim_scales
        ));
    }
    out.push_str(&format!(
        "mean,,,{},{},{},{},{},\n",
        summary.mean_bpp_estimated,
        fmt_measured(summary.mean_bpp_measured),
        summary.mean_psnr_db,
        summary.mean_ms_ssim,
        msssim_to_db(summary.mean_ms_ssim),
    ));
    std::fs::write(path, out)?;
    Ok(())
}
