//! Train-mode forward pass with cached intermediates, and the matching
//! backward pass.
//!
//! The graph is fixed:
//!
//! ```text
//! x --g_a--> y --+noise--> y~ --g_s--> x_hat --> mse
//!            y --h_a--> z --+noise--> z~ --h_s--> sigma
//!            (y~, sigma) --> rate_y        (z~, prior) --> rate_z
//! ```
//!
//! The decorrelation term is owned by the training module; it enters here
//! only as extra gradient contributions on `y` and `z`. Accumulation order is
//! fixed so repeated runs are bit-identical.

use ndarray::{Array1, Array4};

use super::nn;
use super::rate;
use super::ModelParams;

pub(crate) struct TrainForward {
    pub ga_pre: Vec<Array4<f64>>,
    pub y: Array4<f64>,
    pub ha_pre: Vec<Array4<f64>>,
    pub z: Array4<f64>,
    pub y_tilde: Array4<f64>,
    pub z_tilde: Array4<f64>,
    pub hs_pre: Vec<Array4<f64>>,
    pub gs_pre: Vec<Array4<f64>>,
    pub x_hat: Array4<f64>,
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub mse01: f64,
    drate_dy_tilde: Array4<f64>,
    drate_dsigma: Array4<f64>,
    drate_dz_tilde: Array4<f64>,
    drate_dloc: Array1<f64>,
    drate_dlog_scale: Array1<f64>,
}

pub(crate) fn forward_train(
    x: &Array4<f64>,
    params: &ModelParams,
    noise_seed_y: u64,
    noise_seed_z: u64,
) -> TrainForward {
    let (y, ga_pre) = super::run_analysis(x, params, true);
    let (z, ha_pre) = super::run_hyper_analysis(&y, params, true);

    let mut rng_y = crate::rng::stream(noise_seed_y, "uniform-noise", 0);
    let y_tilde = y.mapv(|v| v + super::draw_noise(&mut rng_y));
    let mut rng_z = crate::rng::stream(noise_seed_z, "uniform-noise", 0);
    let z_tilde = z.mapv(|v| v + super::draw_noise(&mut rng_z));

    let (_, sigma, hs_pre) = super::run_hyper_synthesis(&z_tilde, params, true);
    let (x_hat, gs_pre) = super::run_synthesis(&y_tilde, params, true);

    // Conditional rate on the noisy latent, with elementwise derivatives.
    let mut rate_y_bits = 0.0;
    let mut drate_dy_tilde = Array4::zeros(y_tilde.dim());
    let mut drate_dsigma = Array4::zeros(sigma.dim());
    for (idx, v) in y_tilde.indexed_iter() {
        let (r, dv, ds) = rate::gaussian_rate_and_grads(*v, sigma[idx]);
        rate_y_bits += r;
        drate_dy_tilde[idx] = dv;
        drate_dsigma[idx] = ds;
    }

    // Factorized-prior rate on the noisy hyper-latent.
    let c = params.descriptor.latent_channels;
    let mut rate_z_bits = 0.0;
    let mut drate_dz_tilde = Array4::zeros(z_tilde.dim());
    let mut drate_dloc = Array1::zeros(c);
    let mut drate_dlog_scale = Array1::zeros(c);
    for (idx, v) in z_tilde.indexed_iter() {
        let ch = idx.1;
        let (r, dv, dloc, dls) =
            rate::logistic_rate_and_grads(*v, params.prior_loc[ch], params.prior_log_scale[ch]);
        rate_z_bits += r;
        drate_dz_tilde[idx] = dv;
        drate_dloc[ch] += dloc;
        drate_dlog_scale[ch] += dls;
    }

    let count = x.len() as f64;
    let mse01 = x_hat
        .iter()
        .zip(x.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / count;

    TrainForward {
        ga_pre,
        y,
        ha_pre,
        z,
        y_tilde,
        z_tilde,
        hs_pre,
        gs_pre,
        x_hat,
        rate_y_bits,
        rate_z_bits,
        mse01,
        drate_dy_tilde,
        drate_dsigma,
        drate_dz_tilde,
        drate_dloc,
        drate_dlog_scale,
    }
}

pub(crate) struct BackwardWeights {
    /// Multiplier on total bits (the per-pixel rate convention).
    pub w_rate: f64,
    /// Multiplier on `mse01` (distortion weight including unit scaling).
    pub w_mse: f64,
    /// Extra gradient on `y`, already weighted (decorrelation term).
    pub dy_extra: Option<Array4<f64>>,
    /// Extra gradient on `z`, already weighted.
    pub dz_extra: Option<Array4<f64>>,
}

/// Backpropagates the scalar objective through the cached forward pass.
/// Returns parameter gradients in the [`ModelParams`] layout.
pub(crate) fn backward_train(
    x: &Array4<f64>,
    params: &ModelParams,
    fwd: &TrainForward,
    w: &BackwardWeights,
) -> ModelParams {
    let mut grads = params.zeros_like();
    let act = params.descriptor.activation;

    // Distortion head.
    let count = x.len() as f64;
    let mse_coeff = w.w_mse * 2.0 / count;
    let dx_hat = ndarray::Zip::from(&fwd.x_hat)
        .and(x)
        .map_collect(|a, b| mse_coeff * (a - b));

    // Synthesis stack (reverse). Stage inputs are recomputed from stored
    // pre-activations.
    let n_syn = params.synthesis.len();
    let mut stage_inputs: Vec<Array4<f64>> = Vec::with_capacity(n_syn);
    stage_inputs.push(fwd.y_tilde.clone());
    for i in 0..n_syn - 1 {
        stage_inputs.push(super::activate(&fwd.gs_pre[i], act));
    }
    let mut g_pre = dx_hat;
    let mut dy_from_gs = None;
    for i in (0..n_syn).rev() {
        let back = nn::tconv2d_backward(&stage_inputs[i], &params.synthesis[i], &g_pre);
        grads.synthesis[i].weight = back.dw;
        grads.synthesis[i].bias = back.db;
        if i > 0 {
            let dact = super::activate_grad(&fwd.gs_pre[i - 1], act);
            g_pre = back.dx * &dact;
        } else {
            dy_from_gs = Some(back.dx);
        }
    }
    let dy_from_gs = dy_from_gs.expect("nonempty synthesis stack");

    // sigma head: sigma = floor + softplus(raw).
    let raw = fwd.hs_pre.last().expect("nonempty hyper-synthesis stack");
    let mut d_raw = Array4::zeros(raw.dim());
    for (idx, r) in raw.indexed_iter() {
        d_raw[idx] = w.w_rate * fwd.drate_dsigma[idx] * nn::softplus_grad(*r);
    }

    // Hyper-synthesis stack (reverse): each stage is upsample then conv.
    let n_hs = params.hyper_synthesis.len();
    let mut hs_inputs: Vec<Array4<f64>> = Vec::with_capacity(n_hs);
    hs_inputs.push(fwd.z_tilde.clone());
    for i in 0..n_hs - 1 {
        hs_inputs.push(super::activate(&fwd.hs_pre[i], act));
    }
    let mut g_pre = d_raw;
    let mut dz_from_hs = None;
    for i in (0..n_hs).rev() {
        let up = nn::upsample2x(&hs_inputs[i]);
        let back = nn::conv2d_backward(&up, &params.hyper_synthesis[i], &g_pre);
        grads.hyper_synthesis[i].weight = back.dw;
        grads.hyper_synthesis[i].bias = back.db;
        let d_in = nn::upsample2x_backward(&back.dx);
        if i > 0 {
            let dact = super::activate_grad(&fwd.hs_pre[i - 1], act);
            g_pre = d_in * &dact;
        } else {
            dz_from_hs = Some(d_in);
        }
    }
    let dz_from_hs = dz_from_hs.expect("nonempty hyper-synthesis stack");

    // Gradient on z: rate term + hyper-synthesis path + optional extra; the
    // noise proxy passes gradients through unchanged.
    let mut dz = fwd.drate_dz_tilde.mapv(|v| v * w.w_rate) + &dz_from_hs;
    if let Some(extra) = &w.dz_extra {
        dz += extra;
    }

    // Hyper-analysis stack (reverse).
    let n_ha = params.hyper_analysis.len();
    let mut ha_inputs: Vec<Array4<f64>> = Vec::with_capacity(n_ha);
    ha_inputs.push(fwd.y.clone());
    for i in 0..n_ha - 1 {
        ha_inputs.push(super::activate(&fwd.ha_pre[i], act));
    }
    let mut g_pre = dz;
    let mut dy_from_ha = None;
    for i in (0..n_ha).rev() {
        let back = nn::conv2d_backward(&ha_inputs[i], &params.hyper_analysis[i], &g_pre);
        grads.hyper_analysis[i].weight = back.dw;
        grads.hyper_analysis[i].bias = back.db;
        if i > 0 {
            let dact = super::activate_grad(&fwd.ha_pre[i - 1], act);
            g_pre = back.dx * &dact;
        } else {
            dy_from_ha = Some(back.dx);
        }
    }
    let dy_from_ha = dy_from_ha.expect("nonempty hyper-analysis stack");

    // Gradient on y: synthesis path + rate term + hyper path + optional extra.
    let mut dy = dy_from_gs + &fwd.drate_dy_tilde.mapv(|v| v * w.w_rate) + &dy_from_ha;
    if let Some(extra) = &w.dy_extra {
        dy += extra;
    }

    // Analysis stack (reverse); the input gradient is discarded.
    let n_ana = params.analysis.len();
    let mut ana_inputs: Vec<Array4<f64>> = Vec::with_capacity(n_ana);
    ana_inputs.push(x.clone());
    for i in 0..n_ana - 1 {
        ana_inputs.push(super::activate(&fwd.ga_pre[i], act));
    }
    let mut g_pre = dy;
    for i in (0..n_ana).rev() {
        let back = nn::conv2d_backward(&ana_inputs[i], &params.analysis[i], &g_pre);
        grads.analysis[i].weight = back.dw;
        grads.analysis[i].bias = back.db;
        if i > 0 {
            let dact = super::activate_grad(&fwd.ga_pre[i - 1], act);
            g_pre = back.dx * &dact;
        }
    }

    // Prior parameters.
    grads.prior_loc = fwd.drate_dloc.mapv(|v| v * w.w_rate);
    grads.prior_log_scale = fwd.drate_dlog_scale.mapv(|v| v * w.w_rate);

    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchitectureDescriptor;
    use rand::Rng;
    
    fn tiny_params(seed: u64) -> ModelParams {
        let mut d = ArchitectureDescriptor::with_channels(4);
        d.hidden_channels = 4;
        ModelParams::init(d, seed)
    }

    fn objective(x: &Array4<f64>, params: &ModelParams, w_rate: f64, w_mse: f64) -> f64 {
        let fwd = forward_train(x, params, 5, 6);
        w_rate * (fwd.rate_y_bits + fwd.rate_z_bits) + w_mse * fwd.mse01
    }

    /// End-to-end finite-difference check of the full backward pass: every
    /// parameter group must match numeric derivatives of the train objective.
    #[test]
    fn full_backward_matches_finite_differences() {
        let params = tiny_params(9);
        let mut rng = crate::rng::stream(51, "trace", 0);
        let mut x = Array4::zeros((2, 3, 64, 64));
        for v in x.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let w_rate = 1.0 / 4096.0;
        let w_mse = 100.0;

        let fwd = forward_train(&x, &params, 5, 6);
        let grads = backward_train(
            &x,
            &params,
            &fwd,
            &BackwardWeights { w_rate, w_mse, dy_extra: None, dz_extra: None },
        );

        let eps = 1e-5;
        let mut flat_grads: Vec<f64> = Vec::new();
        grads.visit(&mut |s| flat_grads.extend_from_slice(s));

        // Probe a deterministic spread of coordinates across all tensors.
        let total = flat_grads.len();
        let probes: Vec<usize> = (0..24).map(|i| (i * 977 + 13) % total).collect();

        let mut max_rel: f64 = 0.0;
        for &p in &probes {
            let mut plus = params.clone();
            perturb(&mut plus, p, eps);
            let mut minus = params.clone();
            perturb(&mut minus, p, -eps);
            let fd = (objective(&x, &plus, w_rate, w_mse)
                - objective(&x, &minus, w_rate, w_mse))
                / (2.0 * eps);
            let an = flat_grads[p];
            let denom = fd.abs().max(an.abs()).max(1e-7);
            let rel = (fd - an).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(rel < 2e-3, "coordinate {p}: fd {fd} vs analytic {an}");
        }
        assert!(max_rel.is_finite());
    }

    fn perturb(params: &mut ModelParams, linear_idx: usize, delta: f64) {
        let mut offset = 0;
        params.visit_mut(&mut |s| {
            if linear_idx >= offset && linear_idx < offset + s.len() {
                s[linear_idx - offset] += delta;
            }
            offset += s.len();
        });
    }

    #[test]
    fn gradients_all_finite_on_random_batch() {
        let params = tiny_params(10);
        let mut rng = crate::rng::stream(52, "trace", 0);
        let mut x = Array4::zeros((2, 3, 64, 64));
        for v in x.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let fwd = forward_train(&x, &params, 1, 2);
        assert!(fwd.rate_y_bits.is_finite() && fwd.rate_y_bits >= 0.0);
        assert!(fwd.rate_z_bits.is_finite() && fwd.rate_z_bits >= 0.0);
        assert!(fwd.mse01.is_finite());
        let grads = backward_train(
            &x,
            &params,
            &fwd,
            &BackwardWeights {
                w_rate: 1.0 / 4096.0,
                w_mse: 50.0,
                dy_extra: None,
                dz_extra: None,
            },
        );
        assert!(grads.all_finite());
    }
}
