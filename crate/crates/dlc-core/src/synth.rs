//! Procedural test images.
//!
//! Tests and benches need image folders without shipping binary fixtures.
//! The generator blends smooth gradients, low-frequency waves and soft blobs
//! with a little texture noise, deterministically from a seed.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;

use crate::error::Result;

/// Renders one RGB image as `(3, H, W)` values in `[0, 1]`.
pub fn generate(seed: u64, height: usize, width: usize) -> Array3<f64> {
    let mut rng = crate::rng::stream(seed, "synth-image", 0);

    // Per-channel base gradient directions.
    let grads: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.2..0.8),
            )
        })
        .collect();

    // Shared low-frequency waves with per-channel phase.
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(1.0..4.0),
                rng.random_range(1.0..4.0),
                rng.random_range(0.05..0.18),
                [
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ],
            )
        })
        .collect();

    // Soft blobs: position, radius, per-channel amplitude.
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.25),
                [
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                ],
            )
        })
        .collect();

    let noise_amp = rng.random_range(0.005..0.02);

    let mut img = Array3::<f64>::zeros((3, height, width));
    for i in 0..height {
        let fy = i as f64 / height as f64;
        for j in 0..width {
            let fx = j as f64 / width as f64;
            for c in 0..3 {
                let (gx, gy, base) = grads[c];
                let mut v = base + gx * fx + gy * fy;
                for (kx, ky, amp, phases) in &waves {
                    v += amp
                        * (std::f64::consts::TAU * (kx * fx + ky * fy) + phases[c]).sin();
                }
                for (bx, by, r, amps) in &blobs {
                    let d2 = (fx - bx) * (fx - bx) + (fy - by) * (fy - by);
                    v += amps[c] * (-d2 / (2.0 * r * r)).exp();
                }
                v += rng.random_range(-noise_amp..noise_amp);
                img[[c, i, j]] = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Writes `count` generated PNGs into `dir` (created if missing).
pub fn write_corpus(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        let img = generate(crate::rng::derive_seed(seed, "corpus", i as u64), height, width);
        let path = dir.join(format!("synth_{seed}_{i:03}.png"));
        save_png(&img, &path)?;
    }
    Ok(())
}

/// Saves a `(3, H, W)` array in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_png(img: &Array3<f64>, path: &Path) -> Result<()> {
    let (_, h, w) = img.dim();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = [
                (img[[0, i, j]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[1, i, j]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[2, i, j]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            out.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    out.save(path)?;
    Ok(())
}
