//! Interval-mass rate models.
//!
//! An integer-quantized value `v` coded under a continuous density carries
//! `-log2 P(v - 0.5 < X <= v + 0.5)` bits. The conditional model for the main
//! latent is a zero-mean Gaussian with per-element scale; the hyper-latent
//! prior is a per-channel logistic with learned location and scale. Masses
//! are clamped below at [`P_MIN`] so rates stay bounded and coder tables
//! never degenerate.

use std::f64::consts::PI;

/// Minimum interval probability mass.
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Minimum conditional Gaussian scale.
pub const SCALE_FLOOR: f64 = 0.11;

const LN2: f64 = std::f64::consts::LN_2;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Mass of `[v-0.5, v+0.5]` under a zero-mean Gaussian with scale `sigma`.
pub fn gaussian_interval_mass(v: f64, sigma: f64) -> f64 {
    normal_cdf((v + 0.5) / sigma) - normal_cdf((v - 0.5) / sigma)
}

/// Bits to code `v` under the clamped Gaussian interval mass.
pub fn gaussian_rate_bits(v: f64, sigma: f64) -> f64 {
    -gaussian_interval_mass(v, sigma).max(P_MIN).log2()
}

/// Rate and its derivatives with respect to the value and the scale.
///
/// Where the mass sits at the clamp the derivatives are zero.
pub fn gaussian_rate_and_grads(v: f64, sigma: f64) -> (f64, f64, f64) {
    let hi = (v + 0.5) / sigma;
    let lo = (v - 0.5) / sigma;
    let mass = normal_cdf(hi) - normal_cdf(lo);
    if mass <= P_MIN {
        return (-P_MIN.log2(), 0.0, 0.0);
    }
    let rate = -mass.log2();
    let phi_hi = normal_pdf(hi);
    let phi_lo = normal_pdf(lo);
    // d rate / d v = -(phi(hi) - phi(lo)) / (sigma * mass * ln 2)
    let d_v = -(phi_hi - phi_lo) / (sigma * mass * LN2);
    // d rate / d sigma = (phi(hi)*hi - phi(lo)*lo) / (sigma * mass * ln 2)
    let d_sigma = (phi_hi * hi - phi_lo * lo) / (sigma * mass * LN2);
    (rate, d_v, d_sigma)
}

#[inline]
fn logistic_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic CDF with location `loc` and scale `s`.
pub fn logistic_cdf(x: f64, loc: f64, s: f64) -> f64 {
    logistic_sigmoid((x - loc) / s)
}

/// Mass of `[v-0.5, v+0.5]` under a logistic distribution.
pub fn logistic_interval_mass(v: f64, loc: f64, s: f64) -> f64 {
    logistic_cdf(v + 0.5, loc, s) - logistic_cdf(v - 0.5, loc, s)
}

/// Bits to code `v` under the clamped logistic interval mass.
pub fn logistic_rate_bits(v: f64, loc: f64, s: f64) -> f64 {
    -logistic_interval_mass(v, loc, s).max(P_MIN).log2()
}

/// Rate and derivatives with respect to value, location and `ln(scale)`.
pub fn logistic_rate_and_grads(v: f64, loc: f64, log_s: f64) -> (f64, f64, f64, f64) {
    let s = log_s.exp();
    let hi = (v + 0.5 - loc) / s;
    let lo = (v - 0.5 - loc) / s;
    let f_hi = logistic_sigmoid(hi);
    let f_lo = logistic_sigmoid(lo);
    let mass = f_hi - f_lo;
    if mass <= P_MIN {
        return (-P_MIN.log2(), 0.0, 0.0, 0.0);
    }
    let rate = -mass.log2();
    let dmass_hi = f_hi * (1.0 - f_hi);
    let dmass_lo = f_lo * (1.0 - f_lo);
    let d_v = -(dmass_hi - dmass_lo) / (s * mass * LN2);
    let d_loc = (dmass_hi - dmass_lo) / (s * mass * LN2);
    // hi and lo respond to log-scale with factors -hi and -lo.
    let d_log_s = (dmass_hi * hi - dmass_lo * lo) / (mass * LN2);
    (rate, d_v, d_loc, d_log_s)
}
