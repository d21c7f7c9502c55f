//! The transform-coding pipeline: analysis/synthesis transforms, the hyper
//! pair that predicts entropy parameters, quantization (uniform-noise proxy
//! in training, rounding at evaluation) and the two rate models.
//!
//! Architecture: four stride-2 convolution stages down to the latent, a
//! mirrored transposed-convolution synthesis, and a factor-4 hyper pair. The
//! hyper-synthesis upsamples with nearest-neighbor + stride-1 convolutions so
//! a constant hyper-latent yields an exactly uniform scale field. Images must
//! be padded to a multiple of [`ModelParams::divisibility`] before entering
//! the full pipeline.

pub mod nn;
pub mod rate;
pub(crate) mod trace;

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor};
use nn::{Conv2d, ConvShape, ConvTranspose2d, PadMode, TConvShape};

/// Serializable description of the transform stack; checkpoints embed it so
/// they are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    /// Channel count of the coded latent (and the hyper-latent).
    pub latent_channels: usize,
    /// Width of the intermediate stages.
    pub hidden_channels: usize,
    /// Kernel size of every convolution.
    pub kernel: usize,
    /// Strides of the analysis stages; the synthesis mirrors them.
    pub analysis_strides: Vec<usize>,
    /// Strides of the hyper-analysis stages.
    pub hyper_strides: Vec<usize>,
    /// Nonlinearity between stages.
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// `x / (1 + |x|)`.
    Softsign,
    /// `x · sigmoid(x)`.
    Silu,
}

impl ArchitectureDescriptor {
    /// Default stack: 128-channel latent, factor-16 analysis, factor-4 hyper.
    pub fn with_channels(channels: usize) -> Self {
        Self {
            latent_channels: channels,
            hidden_channels: channels,
            kernel: 3,
            analysis_strides: vec![2, 2, 2, 2],
            hyper_strides: vec![2, 2],
            activation: Activation::Softsign,
        }
    }

    /// Total downsampling factor of the analysis transform.
    pub fn analysis_factor(&self) -> usize {
        self.analysis_strides.iter().product()
    }

    /// Downsampling factor of the hyper-analysis relative to the latent.
    pub fn hyper_factor(&self) -> usize {
        self.hyper_strides.iter().product()
    }

    /// Spatial divisibility required of images entering the full pipeline.
    pub fn divisibility(&self) -> usize {
        self.analysis_factor() * self.hyper_factor()
    }
}

impl Default for ArchitectureDescriptor {
    fn default() -> Self {
        Self::with_channels(128)
    }
}

/// Conditional-model parameters for the latent: per-element Gaussian scale
/// (and an optional mean, unused by the default scale-only model).
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    pub scale: Array4<f64>,
    pub mean: Option<Array4<f64>>,
}

impl EntropyParams {
    pub fn mean_at(&self, idx: (usize, usize, usize, usize)) -> f64 {
        self.mean.as_ref().map_or(0.0, |m| m[[idx.0, idx.1, idx.2, idx.3]])
    }
}

/// All learned parameters plus the descriptor they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub descriptor: ArchitectureDescriptor,
    pub analysis: Vec<Conv2d>,
    pub synthesis: Vec<ConvTranspose2d>,
    pub hyper_analysis: Vec<Conv2d>,
    pub hyper_synthesis: Vec<Conv2d>,
    /// Per-channel location of the hyper-latent prior.
    pub prior_loc: Array1<f64>,
    /// Per-channel log-scale of the hyper-latent prior.
    pub prior_log_scale: Array1<f64>,
}

fn init_conv(rng: &mut impl Rng, shape: ConvShape) -> Conv2d {
    let fan_in = (shape.c_in * shape.kernel * shape.kernel) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let mut weight = Array2::zeros((shape.c_out, shape.c_in * shape.kernel * shape.kernel));
    for v in weight.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
    Conv2d {
        weight,
        bias: Array1::zeros(shape.c_out),
        shape,
    }
}

fn init_tconv(rng: &mut impl Rng, shape: TConvShape) -> ConvTranspose2d {
    let fan_in = (shape.c_in * shape.kernel * shape.kernel) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let mut weight = Array2::zeros((shape.c_in, shape.c_out * shape.kernel * shape.kernel));
    for v in weight.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
    ConvTranspose2d {
        weight,
        bias: Array1::zeros(shape.c_out),
        shape,
    }
}

impl ModelParams {
    /// Deterministic initialization from a seed.
    pub fn init(descriptor: ArchitectureDescriptor, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "param-init", 0);
        let c = descriptor.latent_channels;
        let hid = descriptor.hidden_channels;
        let k = descriptor.kernel;
        let n_stages = descriptor.analysis_strides.len();

        let mut analysis = Vec::new();
        for (i, &stride) in descriptor.analysis_strides.iter().enumerate() {
            let c_in = if i == 0 { 3 } else { hid };
            let c_out = if i + 1 == n_stages { c } else { hid };
            analysis.push(init_conv(
                &mut rng,
                ConvShape { c_in, c_out, kernel: k, stride, pad: k / 2, pad_mode: PadMode::Zero },
            ));
        }

        let mut synthesis = Vec::new();
        for (i, &stride) in descriptor.analysis_strides.iter().rev().enumerate() {
            let c_in = if i == 0 { c } else { hid };
            let c_out = if i + 1 == n_stages { 3 } else { hid };
            synthesis.push(init_tconv(
                &mut rng,
                TConvShape {
                    c_in,
                    c_out,
                    kernel: k,
                    stride,
                    pad: k / 2,
                    out_pad: stride - 1,
                },
            ));
        }

        let n_hyper = descriptor.hyper_strides.len();
        let mut hyper_analysis = Vec::new();
        for (i, &stride) in descriptor.hyper_strides.iter().enumerate() {
            let c_in = if i == 0 { c } else { hid };
            let c_out = if i + 1 == n_hyper { c } else { hid };
            hyper_analysis.push(init_conv(
                &mut rng,
                ConvShape { c_in, c_out, kernel: k, stride, pad: k / 2, pad_mode: PadMode::Zero },
            ));
        }

        // Upsampling side: nearest-neighbor resize followed by a stride-1
        // replicate-padded convolution per stage.
        let mut hyper_synthesis = Vec::new();
        for i in 0..n_hyper {
            let c_in = if i == 0 { c } else { hid };
            let c_out = if i + 1 == n_hyper { c } else { hid };
            let mut layer = init_conv(
                &mut rng,
                ConvShape {
                    c_in,
                    c_out,
                    kernel: k,
                    stride: 1,
                    pad: k / 2,
                    pad_mode: PadMode::Replicate,
                },
            );
            if i + 1 == n_hyper {
                // Bias the raw scale head so initial scales sit near 1.
                layer.bias.fill(nn::softplus_inverse(1.0));
            }
            hyper_synthesis.push(layer);
        }

        Self {
            descriptor,
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            prior_loc: Array1::zeros(c),
            prior_log_scale: Array1::zeros(c),
        }
    }

    /// Same structure with all parameter tensors zeroed; gradient and
    /// optimizer-state buffers reuse this shape.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut(&mut |t| t.fill(0.0));
        out
    }

    /// Visits every parameter tensor as a flat slice, in a fixed order.
    pub(crate) fn visit(&self, f: &mut impl FnMut(&[f64])) {
        for l in &self.analysis {
            f(l.weight.as_slice().unwrap());
            f(l.bias.as_slice().unwrap());
        }
        for l in &self.synthesis {
            f(l.weight.as_slice().unwrap());
            f(l.bias.as_slice().unwrap());
        }
        for l in &self.hyper_analysis {
            f(l.weight.as_slice().unwrap());
            f(l.bias.as_slice().unwrap());
        }
        for l in &self.hyper_synthesis {
            f(l.weight.as_slice().unwrap());
            f(l.bias.as_slice().unwrap());
        }
        f(self.prior_loc.as_slice().unwrap());
        f(self.prior_log_scale.as_slice().unwrap());
    }

    pub(crate) fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for l in &mut self.analysis {
            f(l.weight.as_slice_mut().unwrap());
            f(l.bias.as_slice_mut().unwrap());
        }
        for l in &mut self.synthesis {
            f(l.weight.as_slice_mut().unwrap());
            f(l.bias.as_slice_mut().unwrap());
        }
        for l in &mut self.hyper_analysis {
            f(l.weight.as_slice_mut().unwrap());
            f(l.bias.as_slice_mut().unwrap());
        }
        for l in &mut self.hyper_synthesis {
            f(l.weight.as_slice_mut().unwrap());
            f(l.bias.as_slice_mut().unwrap());
        }
        f(self.prior_loc.as_slice_mut().unwrap());
        f(self.prior_log_scale.as_slice_mut().unwrap());
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    pub fn divisibility(&self) -> usize {
        self.descriptor.divisibility()
    }
}

pub(crate) fn activate(x: &Array4<f64>, a: Activation) -> Array4<f64> {
    match a {
        Activation::Softsign => nn::softsign(x),
        Activation::Silu => nn::silu(x),
    }
}

pub(crate) fn activate_grad(pre: &Array4<f64>, a: Activation) -> Array4<f64> {
    match a {
        Activation::Softsign => nn::softsign_grad(pre),
        Activation::Silu => nn::silu_grad(pre),
    }
}

/// Runs the analysis stack; returns the latent and, when `record` is set,
/// the pre-activation of every stage (the latent is the last entry).
pub(crate) fn run_analysis(
    x: &Array4<f64>,
    params: &ModelParams,
    record: bool,
) -> (Array4<f64>, Vec<Array4<f64>>) {
    let mut pres = Vec::new();
    let mut cur = x.clone();
    let last = params.analysis.len() - 1;
    for (i, layer) in params.analysis.iter().enumerate() {
        let pre = nn::conv2d_forward(&cur, layer);
        if i < last {
            cur = activate(&pre, params.descriptor.activation);
        } else {
            cur = pre.clone();
        }
        if record {
            pres.push(pre);
        }
    }
    (cur, pres)
}

pub(crate) fn run_synthesis(
    y: &Array4<f64>,
    params: &ModelParams,
    record: bool,
) -> (Array4<f64>, Vec<Array4<f64>>) {
    let mut pres = Vec::new();
    let mut cur = y.clone();
    let last = params.synthesis.len() - 1;
    for (i, layer) in params.synthesis.iter().enumerate() {
        let pre = nn::tconv2d_forward(&cur, layer);
        if i < last {
            cur = activate(&pre, params.descriptor.activation);
        } else {
            cur = pre.clone();
        }
        if record {
            pres.push(pre);
        }
    }
    (cur, pres)
}

pub(crate) fn run_hyper_analysis(
    y: &Array4<f64>,
    params: &ModelParams,
    record: bool,
) -> (Array4<f64>, Vec<Array4<f64>>) {
    let mut pres = Vec::new();
    let mut cur = y.clone();
    let last = params.hyper_analysis.len() - 1;
    for (i, layer) in params.hyper_analysis.iter().enumerate() {
        let pre = nn::conv2d_forward(&cur, layer);
        if i < last {
            cur = activate(&pre, params.descriptor.activation);
        } else {
            cur = pre.clone();
        }
        if record {
            pres.push(pre);
        }
    }
    (cur, pres)
}

/// Hyper-synthesis: per stage, nearest-neighbor upsample then convolve.
/// Returns the raw head output and the floored scale field.
pub(crate) fn run_hyper_synthesis(
    z: &Array4<f64>,
    params: &ModelParams,
    record: bool,
) -> (Array4<f64>, Array4<f64>, Vec<Array4<f64>>) {
    let mut pres = Vec::new();
    let mut cur = z.clone();
    let last = params.hyper_synthesis.len() - 1;
    for (i, layer) in params.hyper_synthesis.iter().enumerate() {
        let up = nn::upsample2x(&cur);
        let pre = nn::conv2d_forward(&up, layer);
        if i < last {
            cur = activate(&pre, params.descriptor.activation);
        } else {
            cur = pre.clone();
        }
        if record {
            pres.push(pre);
        }
    }
    let raw = cur;
    let sigma = raw.mapv(|v| rate::SCALE_FLOOR + nn::softplus(v));
    (raw, sigma, pres)
}

/// Analysis transform: image batch to latent.
pub fn analyze(x: &ImageTensor, params: &ModelParams) -> Result<LatentTensor> {
    let factor = params.descriptor.analysis_factor();
    let (_, _, h, w) = x.dim();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("spatial size divisible by {factor}"),
            got: format!("{h}x{w}"),
        });
    }
    let (y, _) = run_analysis(x.as_array(), params, false);
    LatentTensor::new(y)
}

/// Synthesis transform: latent to reconstruction, clamped to `[0, 1]`.
///
/// Training keeps raw values for gradient flow; this entry point is the
/// evaluation-time decoder output.
pub fn synthesize(y_hat: &LatentTensor, params: &ModelParams) -> Result<ImageTensor> {
    let c = params.descriptor.latent_channels;
    if y_hat.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: format!("{c} latent channels"),
            got: format!("{}", y_hat.channels()),
        });
    }
    let (raw, _) = run_synthesis(y_hat.as_array(), params, false);
    let clamped = raw.mapv(|v| v.clamp(0.0, 1.0));
    Ok(ImageTensor::from_validated(clamped))
}

/// Hyper-analysis: latent to hyper-latent.
pub fn hyper_analyze(y: &LatentTensor, params: &ModelParams) -> Result<LatentTensor> {
    let c = params.descriptor.latent_channels;
    if y.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: format!("{c} latent channels"),
            got: format!("{}", y.channels()),
        });
    }
    let factor = params.descriptor.hyper_factor();
    if y.height() % factor != 0 || y.width() % factor != 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("latent spatial size divisible by {factor}"),
            got: format!("{}x{}", y.height(), y.width()),
        });
    }
    let (z, _) = run_hyper_analysis(y.as_array(), params, false);
    LatentTensor::new(z)
}

/// Hyper-synthesis: quantized hyper-latent to the conditional scale field.
pub fn hyper_synthesize(z_hat: &LatentTensor, params: &ModelParams) -> Result<EntropyParams> {
    let c = params.descriptor.latent_channels;
    if z_hat.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: format!("{c} hyper channels"),
            got: format!("{}", z_hat.channels()),
        });
    }
    let (_, sigma, _) = run_hyper_synthesis(z_hat.as_array(), params, false);
    Ok(EntropyParams { scale: sigma, mean: None })
}

/// Training quantization proxy: adds i.i.d. uniform noise on `(-0.5, 0.5)`.
/// Gradient passes through as identity.
pub fn quantize_train(v: &LatentTensor, rng_seed: u64) -> LatentTensor {
    let mut rng = crate::rng::stream(rng_seed, "uniform-noise", 0);
    let noisy = v.as_array().mapv(|x| x + draw_noise(&mut rng));
    LatentTensor::from_validated(noisy)
}

pub(crate) fn draw_noise(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random_range(-0.5..0.5);
        if u != -0.5 {
            return u;
        }
    }
}

/// Evaluation quantization: round to nearest integer, ties away from zero.
pub fn quantize_eval(v: &LatentTensor) -> LatentTensor {
    LatentTensor::from_validated(v.as_array().mapv(f64::round))
}

/// Total bits to code `y_hat` under the conditional Gaussian model.
pub fn rate_y(y_hat: &LatentTensor, ep: &EntropyParams) -> Result<f64> {
    Ok(sum_in_order(&rate_y_map(y_hat, ep)?))
}

/// Per-element bit cost under the conditional Gaussian model.
pub fn rate_y_map(y_hat: &LatentTensor, ep: &EntropyParams) -> Result<Array4<f64>> {
    if ep.scale.dim() != y_hat.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", y_hat.dim()),
            got: format!("{:?}", ep.scale.dim()),
        });
    }
    if let Some(bad) = ep.scale.iter().find(|s| **s < rate::SCALE_FLOOR - 1e-12) {
        return Err(Error::InvalidTensor(format!(
            "scale {bad} below floor {}",
            rate::SCALE_FLOOR
        )));
    }
    let mut map = Array4::zeros(y_hat.dim());
    let y = y_hat.view();
    for (idx, out) in map.indexed_iter_mut() {
        let v = y[idx] - ep.mean_at(idx);
        *out = rate::gaussian_rate_bits(v, ep.scale[idx]);
    }
    Ok(map)
}

/// Total bits to code `z_hat` under the per-channel factorized prior.
pub fn rate_z(z_hat: &LatentTensor, params: &ModelParams) -> Result<f64> {
    Ok(sum_in_order(&rate_z_map(z_hat, params)?))
}

/// Per-element bit cost under the factorized prior.
pub fn rate_z_map(z_hat: &LatentTensor, params: &ModelParams) -> Result<Array4<f64>> {
    let c = params.descriptor.latent_channels;
    if z_hat.channels() != c {
        return Err(Error::ShapeMismatch {
            expected: format!("{c} hyper channels"),
            got: format!("{}", z_hat.channels()),
        });
    }
    let mut map = Array4::zeros(z_hat.dim());
    let z = z_hat.view();
    for (idx, out) in map.indexed_iter_mut() {
        let ch = idx.1;
        let s = params.prior_log_scale[ch].exp();
        *out = rate::logistic_rate_bits(z[idx], params.prior_loc[ch], s);
    }
    Ok(map)
}

/// Canonical summation order for rate maps: standard layout iteration.
pub(crate) fn sum_in_order(map: &Array4<f64>) -> f64 {
    map.iter().sum()
}

/// Extends an image to the next multiple of `multiple` on the bottom/right
/// with mirrored content. Returns the padded image and the original size.
pub fn pad_to_multiple(x: &ImageTensor, multiple: usize) -> (ImageTensor, (usize, usize)) {
    let (n, c, h, w) = x.dim();
    let target_h = h.div_ceil(multiple) * multiple;
    let target_w = w.div_ceil(multiple) * multiple;
    if target_h == h && target_w == w {
        return (x.clone(), (h, w));
    }
    let src = x.view();
    let mut out = Array4::<f64>::zeros((n, c, target_h, target_w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..target_h {
                let si = mirror_index(i, h);
                for j in 0..target_w {
                    let sj = mirror_index(j, w);
                    out[[ni, ci, i, j]] = src[[ni, ci, si, sj]];
                }
            }
        }
    }
    (ImageTensor::from_validated(out), (h, w))
}

/// Crops a padded reconstruction back to the original size.
pub fn crop_to(x: &ImageTensor, orig_h: usize, orig_w: usize) -> ImageTensor {
    let (n, c, _, _) = x.dim();
    let src = x.view();
    let mut out = Array4::<f64>::zeros((n, c, orig_h, orig_w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..orig_h {
                for j in 0..orig_w {
                    out[[ni, ci, i, j]] = src[[ni, ci, i, j]];
                }
            }
        }
    }
    ImageTensor::from_validated(out)
}

/// Symmetric mirror extension with period `2h`.
fn mirror_index(i: usize, h: usize) -> usize {
    let m = i % (2 * h);
    if m < h {
        m
    } else {
        2 * h - 1 - m
    }
}
