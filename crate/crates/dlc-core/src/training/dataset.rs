//! Image-folder dataset with uniform random crops.
//!
//! Images are decoded once up front; sampling then only copies crop windows.
//! Files that fail to decode are skipped with a warning, as are images
//! smaller than the requested patch at sampling time.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub struct PatchSampler {
    images: Vec<DecodedImage>,
    /// Files that could not be decoded.
    pub skipped_files: Vec<PathBuf>,
}

struct DecodedImage {
    /// `(3, H, W)`, values in `[0, 1]`.
    data: Array3<f64>,
    path: PathBuf,
}

/// Decodes `path` into a `(3, H, W)` array in `[0, 1]`.
pub fn decode_image(path: &Path) -> Result<Array3<f64>> {
    let img = image::ImageReader::open(path)?
        .decode()
        .map_err(Error::Image)?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut arr = Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            arr[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(arr)
}

impl PatchSampler {
    /// Loads every decodable image in `dir` (non-recursive, sorted by name).
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Dataset(format!(
                "dataset path {} is not a directory",
                dir.display()
            )));
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();

        let mut images = Vec::new();
        let mut skipped_files = Vec::new();
        for path in paths {
            match decode_image(&path) {
                Ok(data) => images.push(DecodedImage { data, path }),
                Err(_) => {
                    log::warn!("skipping undecodable file {}", path.display());
                    skipped_files.push(path);
                }
            }
        }
        if images.is_empty() {
            return Err(Error::Dataset(format!(
                "no decodable images in {}",
                dir.display()
            )));
        }
        Ok(Self { images, skipped_files })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn usable_indices(&self, patch: usize) -> Vec<usize> {
        self.images
            .iter()
            .enumerate()
            .filter(|(_, img)| {
                let (_, h, w) = img.data.dim();
                h >= patch && w >= patch
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Names of images too small for `patch`, for diagnostics.
    pub fn undersized(&self, patch: usize) -> Vec<&Path> {
        self.images
            .iter()
            .filter(|img| {
                let (_, h, w) = img.data.dim();
                h < patch || w < patch
            })
            .map(|img| img.path.as_path())
            .collect()
    }

    /// Draws a batch of uniform random crops.
    pub fn sample(&self, patch: usize, batch: usize, rng: &mut impl Rng) -> Result<ImageTensor> {
        let usable = self.usable_indices(patch);
        if usable.is_empty() {
            return Err(Error::Dataset(format!(
                "no image is at least {patch}x{patch}"
            )));
        }
        let mut out = Array4::<f64>::zeros((batch, 3, patch, patch));
        for b in 0..batch {
            let img = &self.images[usable[rng.random_range(0..usable.len())]].data;
            let (_, h, w) = img.dim();
            let top = rng.random_range(0..=h - patch);
            let left = rng.random_range(0..=w - patch);
            for c in 0..3 {
                for i in 0..patch {
                    for j in 0..patch {
                        out[[b, c, i, j]] = img[[c, top + i, left + j]];
                    }
                }
            }
        }
        Ok(ImageTensor::from_validated(out))
    }
}

/// One-shot convenience: load a folder and draw a single seeded batch.
pub fn sample_patches(
    dataset_path: &Path,
    patch_size: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ImageTensor> {
    let sampler = PatchSampler::load(dataset_path)?;
    let mut rng = crate::rng::stream(seed, "patch", 0);
    sampler.sample(patch_size, batch_size, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn sampling_shape_range_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_corpus(dir.path(), 4, 96, 80, 99).unwrap();

        let b1 = sample_patches(dir.path(), 64, 3, 7).unwrap();
        assert_eq!(b1.dim(), (3, 3, 64, 64));
        assert!(b1.view().iter().all(|v| (0.0..=1.0).contains(v)));

        let b2 = sample_patches(dir.path(), 64, 3, 7).unwrap();
        assert_eq!(b1, b2);
        let b3 = sample_patches(dir.path(), 64, 3, 8).unwrap();
        assert_ne!(b1, b3);
    }

    #[test]
    fn undersized_images_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_corpus(dir.path(), 2, 48, 48, 1).unwrap();
        synth::write_corpus(dir.path(), 1, 128, 128, 2).unwrap();

        let sampler = PatchSampler::load(dir.path()).unwrap();
        assert_eq!(sampler.len(), 3);
        assert_eq!(sampler.undersized(64).len(), 2);
        let mut rng = crate::rng::stream(3, "t", 0);
        let batch = sampler.sample(64, 2, &mut rng).unwrap();
        assert_eq!(batch.dim(), (2, 3, 64, 64));
        // Nothing is big enough for 256.
        assert!(sampler.sample(256, 1, &mut rng).is_err());
    }

    #[test]
    fn rejects_missing_and_empty_dirs() {
        assert!(PatchSampler::load(Path::new("/nonexistent-dlc-test")).is_err());
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("junk.txt"), b"not an image").unwrap();
        assert!(PatchSampler::load(dir.path()).is_err());
    }
}
