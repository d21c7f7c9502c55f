pub mod analyze;
pub mod bdrate;
pub mod codecio;
pub mod eval;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use dlc_core::codec::ArchitectureDescriptor;
use dlc_core::training::config::PartialConfig;
use dlc_core::training::{RdoConfig, Variant, DESK_CHANNELS, PAPER_CHANNELS};
use dlc_core::{Error, Result};

/// Environment variable supplying the default dataset path.
pub const DATA_ROOT_ENV: &str = "DECORR_DATA_ROOT";

/// Flags shared by training-style commands; every flag overrides the
/// corresponding config-file key.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset: `paper` (256px patches, batch 16, 128 channels) or `desk`
    /// (128px patches, batch 8, 5k steps, 48 channels).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// One of: baseline, y, z, y+z.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub apply_on_quantized: Option<bool>,
    #[arg(long)]
    pub include_diagonal: Option<bool>,
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Latent channel count of the architecture.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Image folder; defaults to the config key, then DECORR_DATA_ROOT.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Fully resolved training configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub rdo: RdoConfig,
    pub channels: usize,
    pub dataset: PathBuf,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let (mut rdo, mut channels) = match self.preset.as_deref() {
            None | Some("paper") => (RdoConfig::default(), PAPER_CHANNELS),
            Some("desk") => (RdoConfig::desk_preset(), DESK_CHANNELS),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; expected paper or desk"
                )))
            }
        };

        let mut dataset: Option<PathBuf> = None;
        if let Some(path) = &self.config {
            let file = PartialConfig::load(path)?;
            file.apply_to(&mut rdo);
            if let Some(c) = file.channels {
                channels = c;
            }
            if let Some(d) = file.dataset {
                dataset = Some(d);
            }
        }

        if let Some(v) = self.lambda_d {
            rdo.lambda_d = v;
        }
        if let Some(v) = self.alpha {
            rdo.alpha = v;
        }
        if let Some(v) = &self.variant {
            rdo.variant = v.parse::<Variant>()?;
        }
        if let Some(v) = self.apply_on_quantized {
            rdo.apply_on_quantized = v;
        }
        if let Some(v) = self.include_diagonal {
            rdo.decorr_options.include_diagonal = v;
        }
        if let Some(v) = self.normalize {
            rdo.decorr_options.normalize = v;
        }
        if let Some(v) = self.batch_size {
            rdo.batch_size = v;
        }
        if let Some(v) = self.patch_size {
            rdo.patch_size = v;
        }
        if let Some(v) = self.steps {
            rdo.steps = v;
        }
        if let Some(v) = self.learning_rate {
            rdo.learning_rate = v;
        }
        if let Some(v) = self.seed {
            rdo.seed = v;
        }
        if let Some(c) = self.channels {
            channels = c;
        }
        if let Some(d) = &self.data {
            dataset = Some(d.clone());
        }
        if dataset.is_none() {
            if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
                dataset = Some(PathBuf::from(root));
            }
        }
        let dataset = dataset.ok_or_else(|| {
            Error::Dataset(format!(
                "no dataset path: pass --data, set the config key 'dataset', or export {DATA_ROOT_ENV}"
            ))
        })?;

        rdo.validate()?;
        Ok(Resolved { rdo, channels, dataset })
    }
}

pub fn descriptor_for(channels: usize) -> ArchitectureDescriptor {
    ArchitectureDescriptor::with_channels(channels)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Loads an image file as a single-image tensor.
pub fn load_image(path: &Path) -> Result<dlc_core::ImageTensor> {
    let arr = dlc_core::training::dataset::decode_image(path)?;
    let (c, h, w) = arr.dim();
    let mut out = ndarray::Array4::zeros((1, c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[0, ci, i, j]] = arr[[ci, i, j]];
            }
        }
    }
    dlc_core::ImageTensor::new(out)
}

/// Saves a single-image tensor as PNG.
pub fn save_image(x: &dlc_core::ImageTensor, path: &Path) -> Result<()> {
    let (_, _, h, w) = x.dim();
    let v = x.view();
    let mut arr = ndarray::Array3::zeros((3, h, w));
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                arr[[c, i, j]] = v[[0, c, i, j]];
            }
        }
    }
    dlc_core::synth::save_png(&arr, path)
}

/// Files in a directory, sorted; or the single file itself.
pub fn input_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("{} is empty", path.display())));
        }
        return Ok(files);
    }
    Err(Error::Dataset(format!("{} does not exist", path.display())))
}
