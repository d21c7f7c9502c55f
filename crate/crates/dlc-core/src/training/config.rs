//! Flat `key = value` config files.
//!
//! Keys mirror the training config plus `channels` (architecture width) and
//! `dataset` (image folder). CLI flags override file values; the
//! `DECORR_DATA_ROOT` environment variable supplies a default dataset path.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{RdoConfig, Variant};

pub const VALID_KEYS: &[&str] = &[
    "lambda_d",
    "alpha",
    "variant",
    "apply_on_quantized",
    "include_diagonal",
    "normalize",
    "batch_size",
    "patch_size",
    "steps",
    "learning_rate",
    "seed",
    "channels",
    "dataset",
];

/// Parsed config file; every field optional so flags can fill the rest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialConfig {
    pub lambda_d: Option<f64>,
    pub alpha: Option<f64>,
    pub variant: Option<Variant>,
    pub apply_on_quantized: Option<bool>,
    pub include_diagonal: Option<bool>,
    pub normalize: Option<bool>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub steps: Option<u64>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub channels: Option<usize>,
    pub dataset: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

impl PartialConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "lambda_d" => out.lambda_d = Some(parse_value(key, value)?),
                "alpha" => out.alpha = Some(parse_value(key, value)?),
                "variant" => out.variant = Some(parse_value(key, value)?),
                "apply_on_quantized" => out.apply_on_quantized = Some(parse_value(key, value)?),
                "include_diagonal" => out.include_diagonal = Some(parse_value(key, value)?),
                "normalize" => out.normalize = Some(parse_value(key, value)?),
                "batch_size" => out.batch_size = Some(parse_value(key, value)?),
                "patch_size" => out.patch_size = Some(parse_value(key, value)?),
                "steps" => out.steps = Some(parse_value(key, value)?),
                "learning_rate" => out.learning_rate = Some(parse_value(key, value)?),
                "seed" => out.seed = Some(parse_value(key, value)?),
                "channels" => out.channels = Some(parse_value(key, value)?),
                "dataset" => out.dataset = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::Config(format!(
                        "unknown config key '{other}'; valid keys: {}",
                        VALID_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fills a base config with every value present in the file.
    pub fn apply_to(&self, cfg: &mut RdoConfig) {
        if let Some(v) = self.lambda_d {
            cfg.lambda_d = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.apply_on_quantized {
            cfg.apply_on_quantized = v;
        }
        if let Some(v) = self.include_diagonal {
            cfg.decorr_options.include_diagonal = v;
        }
        if let Some(v) = self.normalize {
            cfg.decorr_options.normalize = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}
