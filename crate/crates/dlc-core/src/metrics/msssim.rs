//! Multi-scale structural similarity.
//!
//! Standard 5-scale construction: 11x11 Gaussian window (sigma 1.5),
//! K1 = 0.01, K2 = 0.03, scale weights (0.0448, 0.2856, 0.3001, 0.2363,
//! 0.1333), computed on luma. Images too small for five dyadic scales are
//! scored with the scales that fit (weights renormalized) and the scale
//! count is reported alongside the value.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Dyadic scales used; fewer than 5 flags a reduced-scale computation.
    pub scales_used: usize,
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn luma(x: &ImageTensor, n: usize) -> Array2<f64> {
    let (_, _, h, w) = x.dim();
    let v = x.view();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] =
                0.299 * v[[n, 0, i, j]] + 0.587 * v[[n, 1, i, j]] + 0.114 * v[[n, 2, i, j]];
        }
    }
    out
}

/// Separable valid-mode Gaussian filtering.
fn filter_valid(src: &Array2<f64>, kernel: &[f64; WINDOW]) -> Array2<f64> {
    let (h, w) = src.dim();
    let oh = h - WINDOW + 1;
    let ow = w - WINDOW + 1;
    let mut rows = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                acc += kv * src[[i, j + t]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                acc += kv * rows[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn downsample2(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = 0.25
                * (src[[2 * i, 2 * j]]
                    + src[[2 * i, 2 * j + 1]]
                    + src[[2 * i + 1, 2 * j]]
                    + src[[2 * i + 1, 2 * j + 1]]);
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_scale(a: &Array2<f64>, b: &Array2<f64>, kernel: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_a = filter_valid(a, kernel);
    let mu_b = filter_valid(b, kernel);
    let aa = filter_valid(&(a * a), kernel);
    let bb = filter_valid(&(b * b), kernel);
    let ab = filter_valid(&(a * b), kernel);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let count = mu_a.len() as f64;
    for (idx, ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let va = aa[idx] - ma * ma;
        let vb = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / count, cs_sum / count)
}

/// Number of dyadic scales the image supports, capped at 5.
fn feasible_scales(h: usize, w: usize) -> usize {
    let mut scales = 0;
    let (mut ch, mut cw) = (h, w);
    while scales < 5 && ch >= WINDOW && cw >= WINDOW {
        scales += 1;
        ch /= 2;
        cw /= 2;
    }
    scales
}

/// Multi-scale SSIM between two image batches (averaged over the batch).
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<MsSsim> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    let (n, _, h, w) = a.dim();
    let scales = feasible_scales(h, w);
    if scales == 0 {
        return Err(Error::InvalidTensor(format!(
            "image {h}x{w} smaller than the {WINDOW}-tap window"
        )));
    }
    if scales < 5 {
        log::warn!("image {h}x{w} supports only {scales} of 5 scales");
    }
    let weight_sum: f64 = WEIGHTS[..scales].iter().sum();
    let kernel = gaussian_kernel();

    let mut total = 0.0;
    for ni in 0..n {
        let mut pa = luma(a, ni);
        let mut pb = luma(b, ni);
        let mut value = 1.0f64;
        for s in 0..scales {
            let (ssim, cs) = ssim_scale(&pa, &pb, &kernel);
            let wgt = WEIGHTS[s] / weight_sum;
            let factor = if s + 1 == scales { ssim } else { cs };
            value *= factor.max(0.0).powf(wgt);
            if s + 1 < scales {
                pa = downsample2(&pa);
                pb = downsample2(&pb);
            }
        }
        total += value;
    }
    let value = (total / n as f64).clamp(1e-12, 1.0);
    Ok(MsSsim { value, scales_used: scales })
}

/// Decibel form used for BD computation on MS-SSIM curves.
pub fn msssim_to_db(v: f64) -> f64 {
    -10.0 * (1.0 - v).max(1e-10).log10()
}
