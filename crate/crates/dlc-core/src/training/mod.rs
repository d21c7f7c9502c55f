//! Rate-distortion training with the optional channel-decorrelation term.
//!
//! The objective is, in bits-per-pixel rate convention,
//!
//! ```text
//! total = R(y~)/pixels + R(z~)/pixels + lambda_d * (D + alpha * L_fd)
//! ```
//!
//! with `D` the mean squared error in 8-bit pixel units (MSE of `[0,1]`
//! values scaled by 255^2), so the standard lambda grid transfers across
//! patch sizes. The decorrelation weight is always the product
//! `alpha * lambda_d`; it is never stored separately.

pub mod config;
pub mod dataset;

use std::path::Path;
use std::time::Instant;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::codec::trace::{self, BackwardWeights};
use crate::codec::{ArchitectureDescriptor, ModelParams};
use crate::decorrelation::{self, DecorrOptions};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor};

/// Which latent carries the decorrelation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    Y,
    Z,
    YZ,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "y" => Ok(Self::Y),
            "z" => Ok(Self::Z),
            "y+z" => Ok(Self::YZ),
            other => Err(Error::Config(format!(
                "unknown variant '{other}'; expected baseline, y, z or y+z"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Baseline => "baseline",
            Self::Y => "y",
            Self::Z => "z",
            Self::YZ => "y+z",
        };
        f.write_str(s)
    }
}

/// The paper-standard rate grid.
pub const LAMBDA_GRID: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.0483];

/// Decorrelation weight range explored per rate point.
pub const ALPHA_RANGE: (f64, f64) = (1e-8, 1e-5);

/// Default decorrelation weight: 10^-5.5, inside [`ALPHA_RANGE`].
pub const ALPHA_DEFAULT: f64 = 3.162_277_660_168_379_5e-6;

/// Latent width of the full-scale configuration.
pub const PAPER_CHANNELS: usize = 128;

/// Latent width of the desk-scale preset.
pub const DESK_CHANNELS: usize = 48;

/// Distortion unit scaling: MSE of `[0,1]` images expressed in 8-bit pixel
/// units, so the standard lambda grid lands at the intended operating points.
pub const MSE_PIXEL_SCALE: f64 = 255.0 * 255.0;

const GRAD_CLIP_NORM: f64 = 1.0;
const EMA_FACTOR: f64 = 0.99;
const LOG_EVERY: u64 = 50;

/// Training hyperparameters. The decorrelation weight is `alpha * lambda_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdoConfig {
    pub lambda_d: f64,
    pub alpha: f64,
    pub variant: Variant,
    /// Apply the decorrelation term to the noise-quantized latents instead
    /// of the raw transform outputs.
    pub apply_on_quantized: bool,
    pub decorr_options: DecorrOptions,
    pub batch_size: usize,
    pub patch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RdoConfig {
    /// Full-scale defaults: 256-pixel patches, batch 16.
    fn default() -> Self {
        Self {
            lambda_d: 0.013,
            alpha: ALPHA_DEFAULT,
            variant: Variant::Baseline,
            apply_on_quantized: false,
            decorr_options: DecorrOptions::default(),
            batch_size: 16,
            patch_size: 256,
            steps: 30_000,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl RdoConfig {
    /// CPU-friendly preset: 128-pixel patches, batch 8, 5k steps. Pair with
    /// [`DESK_CHANNELS`].
    pub fn desk_preset() -> Self {
        Self {
            batch_size: 8,
            patch_size: 128,
            steps: 5000,
            ..Self::default()
        }
    }

    /// Effective weight on the decorrelation term.
    pub fn lambda_fd(&self) -> f64 {
        self.alpha * self.lambda_d
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0) {
            return Err(Error::Config("lambda_d must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step objective values. `total` follows the bits-per-pixel convention;
/// the decorrelation value is reported even when its weight is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    /// MSE in 8-bit pixel units.
    pub distortion: f64,
    pub l_fd: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(rate_y_bits: f64, rate_z_bits: f64, mse01: f64, l_fd: f64, cfg: &RdoConfig, pixels: f64) -> Self {
        let distortion = MSE_PIXEL_SCALE * mse01;
        let total =
            rate_y_bits / pixels + rate_z_bits / pixels + cfg.lambda_d * (distortion + cfg.alpha * l_fd);
        Self { rate_y_bits, rate_z_bits, distortion, l_fd, total }
    }
}

struct DecorrTerm {
    l_fd: f64,
    dy: Option<Array4<f64>>,
    dz: Option<Array4<f64>>,
    seconds: f64,
}

/// Evaluates the decorrelation term on the latents selected by the variant.
fn decorr_term(
    fwd: &trace::TrainForward,
    cfg: &RdoConfig,
    want_grads: bool,
) -> Result<DecorrTerm> {
    let t0 = Instant::now();
    let mut l_fd = 0.0;
    let mut dy = None;
    let mut dz = None;

    let on_y = matches!(cfg.variant, Variant::Y | Variant::YZ);
    let on_z = matches!(cfg.variant, Variant::Z | Variant::YZ);

    if on_y {
        let field = if cfg.apply_on_quantized { &fwd.y_tilde } else { &fwd.y };
        let f = LatentTensor::from_validated(field.clone());
        if want_grads {
            let (l, g) = decorrelation::loss_and_gradient(&f, &cfg.decorr_options)?;
            l_fd += l;
            dy = Some(g.into_array());
        } else {
            l_fd += decorrelation::decorrelation_loss(&f, &cfg.decorr_options)?;
        }
    }
    if on_z {
        let field = if cfg.apply_on_quantized { &fwd.z_tilde } else { &fwd.z };
        let f = LatentTensor::from_validated(field.clone());
        if want_grads {
            let (l, g) = decorrelation::loss_and_gradient(&f, &cfg.decorr_options)?;
            l_fd += l;
            dz = Some(g.into_array());
        } else {
            l_fd += decorrelation::decorrelation_loss(&f, &cfg.decorr_options)?;
        }
    }

    Ok(DecorrTerm { l_fd, dy, dz, seconds: t0.elapsed().as_secs_f64() })
}

/// Runs the train-mode pipeline on a batch and assembles the objective.
///
/// `noise_seed` drives the quantization-noise draws; identical inputs and
/// seed produce an identical breakdown.
pub fn compute_objective(
    x: &ImageTensor,
    params: &ModelParams,
    cfg: &RdoConfig,
    noise_seed: u64,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if x.batch() == 1 && cfg.variant != Variant::Baseline {
        log::warn!("decorrelation term is identically zero for single-sample batches");
    }
    let ny = crate::rng::derive_seed(noise_seed, "noise-y", 0);
    let nz = crate::rng::derive_seed(noise_seed, "noise-z", 0);
    let fwd = trace::forward_train(x.as_array(), params, ny, nz);
    let term = decorr_term(&fwd, cfg, false)?;
    let pixels = x.pixels() as f64;
    Ok(LossBreakdown::assemble(
        fwd.rate_y_bits,
        fwd.rate_z_bits,
        fwd.mse01,
        term.l_fd,
        cfg,
        pixels,
    ))
}

struct StepOutput {
    breakdown: LossBreakdown,
    grads: ModelParams,
    decorr_seconds: f64,
}

fn objective_and_grads(
    x: &ImageTensor,
    params: &ModelParams,
    cfg: &RdoConfig,
    step: u64,
) -> Result<StepOutput> {
    let ny = crate::rng::derive_seed(cfg.seed, "noise-y", step);
    let nz = crate::rng::derive_seed(cfg.seed, "noise-z", step);
    let fwd = trace::forward_train(x.as_array(), params, ny, nz);

    // The decorrelation gradient only enters when its weight is nonzero, so
    // an alpha = 0 run applies bit-identical updates to a baseline run.
    let weight_fd = cfg.lambda_fd();
    let term = decorr_term(&fwd, cfg, weight_fd > 0.0)?;

    let pixels = x.pixels() as f64;
    let breakdown =
        LossBreakdown::assemble(fwd.rate_y_bits, fwd.rate_z_bits, fwd.mse01, term.l_fd, cfg, pixels);

    let weights = BackwardWeights {
        w_rate: 1.0 / pixels,
        w_mse: cfg.lambda_d * MSE_PIXEL_SCALE,
        dy_extra: (weight_fd > 0.0)
            .then(|| term.dy.map(|g| g.mapv(|v| v * weight_fd)))
            .flatten(),
        dz_extra: (weight_fd > 0.0)
            .then(|| term.dz.map(|g| g.mapv(|v| v * weight_fd)))
            .flatten(),
    };
    let grads = trace::backward_train(x.as_array(), params, &fwd, &weights);

    Ok(StepOutput { breakdown, grads, decorr_seconds: term.seconds })
}

/// Flat adaptive-moment state; converted to the parameter layout only at
/// checkpoint boundaries.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn from_params(m: &ModelParams, v: &ModelParams) -> Self {
        let mut out = Self { m: Vec::new(), v: Vec::new() };
        m.visit(&mut |s| out.m.extend_from_slice(s));
        v.visit(&mut |s| out.v.extend_from_slice(s));
        out
    }

    fn to_params(&self, template: &ModelParams) -> (ModelParams, ModelParams) {
        let mut m = template.zeros_like();
        let mut v = template.zeros_like();
        let mut off = 0;
        m.visit_mut(&mut |s| {
            s.copy_from_slice(&self.m[off..off + s.len()]);
            off += s.len();
        });
        off = 0;
        v.visit_mut(&mut |s| {
            s.copy_from_slice(&self.v[off..off + s.len()]);
            off += s.len();
        });
        (m, v)
    }
}

/// Scales gradients so their global L2 norm does not exceed the clip bound.
fn clip_gradients(g: &mut [f64]) {
    let sq: f64 = g.iter().map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > GRAD_CLIP_NORM {
        let scale = GRAD_CLIP_NORM / norm;
        for v in g {
            *v *= scale;
        }
    }
}

/// One adaptive-moment update (bias-corrected, fixed hyperparameters).
fn adam_step(params: &mut ModelParams, g_flat: &[f64], state: &mut AdamState, t: u64, lr: f64) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);

    let mut off = 0usize;
    params.visit_mut(&mut |s| {
        for (i, p) in s.iter_mut().enumerate() {
            let g = g_flat[off + i];
            let m = &mut state.m[off + i];
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            let v = &mut state.v[off + i];
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
        }
        off += s.len();
    });
}

/// One logged point of the loss trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossLogEntry {
    pub step: u64,
    pub total: f64,
    pub rate_y_bpp: f64,
    pub rate_z_bpp: f64,
    pub distortion: f64,
    pub l_fd: f64,
    pub smoothed_total: f64,
}

/// Wall-clock split of the run. Not deterministic, unlike the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingTiming {
    pub core_seconds: f64,
    pub decorr_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub steps_run: u64,
    pub initial_smoothed_loss: f64,
    pub final_smoothed_loss: f64,
    pub loss_log: Vec<LossLogEntry>,
    pub warnings: Vec<String>,
    pub timing: TrainingTiming,
}

/// Trains from scratch; see [`train_with_start`].
pub fn train(
    dataset_path: &Path,
    cfg: &RdoConfig,
    descriptor: ArchitectureDescriptor,
    checkpoint_out: &Path,
) -> Result<TrainingReport> {
    train_with_start(dataset_path, cfg, descriptor, None, checkpoint_out)
}

/// Runs the optimization loop up to `cfg.steps`, optionally resuming from a
/// checkpoint that carries optimizer state. Writes the final checkpoint
/// (parameters, config, optimizer state) to `checkpoint_out`.
pub fn train_with_start(
    dataset_path: &Path,
    cfg: &RdoConfig,
    descriptor: ArchitectureDescriptor,
    start: Option<Checkpoint>,
    checkpoint_out: &Path,
) -> Result<TrainingReport> {
    cfg.validate()?;
    let div = descriptor.divisibility();
    if cfg.patch_size % div != 0 {
        return Err(Error::Config(format!(
            "patch_size {} must be divisible by {div}",
            cfg.patch_size
        )));
    }

    let run_start = Instant::now();
    let sampler = dataset::PatchSampler::load(dataset_path)?;
    let mut warnings = Vec::new();
    for path in &sampler.skipped_files {
        warnings.push(format!("skipped undecodable file {}", path.display()));
    }
    for path in sampler.undersized(cfg.patch_size) {
        warnings.push(format!(
            "image {} smaller than patch {}; skipped",
            path.display(),
            cfg.patch_size
        ));
        log::warn!("image {} smaller than patch size, skipped", path.display());
    }
    if cfg.batch_size == 1 && cfg.variant != Variant::Baseline {
        warnings.push("decorrelation term is identically zero for single-sample batches".into());
        log::warn!("decorrelation term is identically zero for single-sample batches");
    }

    let (mut params, mut adam, start_step) = match start {
        Some(ckpt) => {
            if ckpt.params.descriptor != descriptor {
                return Err(Error::Checkpoint(
                    "resume checkpoint has a different architecture".into(),
                ));
            }
            let n = ckpt.params.parameter_count();
            match ckpt.train_state {
                Some(state) => (
                    ckpt.params,
                    AdamState::from_params(&state.m, &state.v),
                    state.step,
                ),
                None => (ckpt.params, AdamState::zeros(n), 0),
            }
        }
        None => {
            let params = ModelParams::init(descriptor.clone(), cfg.seed);
            let n = params.parameter_count();
            (params, AdamState::zeros(n), 0)
        }
    };

    let mut loss_log = Vec::new();
    let mut smoothed = f64::NAN;
    let mut initial_smoothed = f64::NAN;
    let mut decorr_seconds_total = 0.0;
    let pixels = (cfg.batch_size * cfg.patch_size * cfg.patch_size) as f64;

    for step in start_step..cfg.steps {
        let mut patch_rng = crate::rng::stream(cfg.seed, "patch", step);
        let batch = sampler.sample(cfg.patch_size, cfg.batch_size, &mut patch_rng)?;

        let out = objective_and_grads(&batch, &params, cfg, step)?;
        decorr_seconds_total += out.decorr_seconds;
        let b = out.breakdown;

        if !b.total.is_finite() {
            let stats = batch_stats(batch.as_array());
            return Err(Error::Diverged(format!(
                "non-finite loss at step {step}: rate_y={} rate_z={} distortion={} l_fd={}; batch {stats}",
                b.rate_y_bits, b.rate_z_bits, b.distortion, b.l_fd
            )));
        }

        smoothed = if step == start_step && start_step == 0 {
            b.total
        } else if smoothed.is_nan() {
            b.total
        } else {
            EMA_FACTOR * smoothed + (1.0 - EMA_FACTOR) * b.total
        };
        if step == 0 {
            initial_smoothed = smoothed;
        }

        if step % LOG_EVERY == 0 || step + 1 == cfg.steps {
            loss_log.push(LossLogEntry {
                step,
                total: b.total,
                rate_y_bpp: b.rate_y_bits / pixels,
                rate_z_bpp: b.rate_z_bits / pixels,
                distortion: b.distortion,
                l_fd: b.l_fd,
                smoothed_total: smoothed,
            });
            log::info!(
                "step {step}: total {:.5} (rate {:.4} bpp, distortion {:.2}, l_fd {:.3e})",
                b.total,
                (b.rate_y_bits + b.rate_z_bits) / pixels,
                b.distortion,
                b.l_fd
            );
        }

        let mut g_flat: Vec<f64> = Vec::with_capacity(adam.m.len());
        out.grads.visit(&mut |s| g_flat.extend_from_slice(s));
        clip_gradients(&mut g_flat);
        adam_step(&mut params, &g_flat, &mut adam, step + 1, cfg.learning_rate);
    }

    if !params.all_finite() {
        return Err(Error::Diverged("non-finite parameters after training".into()));
    }

    let (m, v) = adam.to_params(&params);
    let mut ckpt = Checkpoint::new(params, cfg.clone());
    ckpt.train_state = Some(TrainState { m, v, step: cfg.steps });
    ckpt.save(checkpoint_out)?;

    let total_seconds = run_start.elapsed().as_secs_f64();
    Ok(TrainingReport {
        steps_run: cfg.steps - start_step,
        initial_smoothed_loss: initial_smoothed,
        final_smoothed_loss: smoothed,
        loss_log,
        warnings,
        timing: TrainingTiming {
            core_seconds: total_seconds - decorr_seconds_total,
            decorr_seconds: decorr_seconds_total,
            total_seconds,
        },
    })
}

fn batch_stats(x: &Array4<f64>) -> String {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for v in x.iter() {
        min = min.min(*v);
        max = max.max(*v);
        sum += *v;
    }
    format!(
        "shape {:?}, min {min:.4}, max {max:.4}, mean {:.4}",
        x.dim(),
        sum / x.len() as f64
    )
}
