//! Channel-wise covariance structure of latent tensors and the decorrelation
//! regularizer built on it.
//!
//! At every spatial site the covariance between channel pairs is taken across
//! the batch dimension. The regularizer sums absolute covariances of the
//! selected channel pairs over all sites; its analytic gradient is exact,
//! with subgradient 0 at the |·| kink.
//!
//! Default pair selection counts each unordered pair once and excludes the
//! diagonal (variances measure energy, not redundancy). Both switches are
//! exposed in [`DecorrOptions`], as is a batch-size-invariant normalization.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::par;
use crate::tensor::LatentTensor;

/// Pair-selection and normalization switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecorrOptions {
    /// Include the per-channel variance terms (`u = v`) in the sum.
    pub include_diagonal: bool,
    /// Divide covariances by `N` and the final sum by `H·W·P`, where `P` is
    /// the number of summed channel pairs.
    pub normalize: bool,
}

impl Default for DecorrOptions {
    fn default() -> Self {
        Self {
            include_diagonal: false,
            normalize: false,
        }
    }
}

/// Per-site channel covariance matrices and the batch means they are
/// centered on.
#[derive(Debug, Clone)]
pub struct CovarianceField {
    /// Shape `(H, W, C, C)`; symmetric in the last two axes.
    pub values: Array4<f64>,
    /// Batch mean per channel and site, shape `(C, H, W)`.
    pub means: Array3<f64>,
}

/// Batch means per `(channel, site)`, shape `(C, H, W)`.
fn batch_means(f: &LatentTensor) -> Array3<f64> {
    let (n, c, h, w) = f.dim();
    let data = f.view();
    let mut means = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for hi in 0..h {
            for wi in 0..w {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += data[[ni, ci, hi, wi]];
                }
                means[[ci, hi, wi]] = acc / n as f64;
            }
        }
    }
    means
}

/// Centered data matrices, one `(N, C)` block per site, shape `(H·W, N, C)`.
fn centered_by_site(f: &LatentTensor, means: &Array3<f64>) -> Array3<f64> {
    let (n, c, h, w) = f.dim();
    let data = f.view();
    let mut x = Array3::<f64>::zeros((h * w, n, c));
    for hi in 0..h {
        for wi in 0..w {
            let site = hi * w + wi;
            for ni in 0..n {
                for ci in 0..c {
                    x[[site, ni, ci]] = data[[ni, ci, hi, wi]] - means[[ci, hi, wi]];
                }
            }
        }
    }
    x
}

/// Covariance of every channel pair at every site, across the batch.
pub fn channel_covariance(f: &LatentTensor) -> Result<CovarianceField> {
    let (_, c, h, w) = f.dim();
    let means = batch_means(f);
    let x = centered_by_site(f, &means);

    let mut values = Array4::<f64>::zeros((h, w, c, c));
    {
        let blocks: Vec<(usize, &mut [f64])> = values
            .as_slice_mut()
            .expect("standard layout")
            .chunks_mut(c * c)
            .enumerate()
            .collect();
        let mut blocks: Vec<&mut [f64]> = blocks.into_iter().map(|(_, b)| b).collect();
        par::for_each_mut(&mut blocks, |site, block| {
            let xs = x.index_axis(ndarray::Axis(0), site);
            let gram = xs.t().dot(&xs);
            block.copy_from_slice(gram.as_slice().expect("standard layout"));
        });
    }

    Ok(CovarianceField { values, means })
}

/// Number of summed channel pairs under `opts`.
fn pair_count(c: usize, opts: &DecorrOptions) -> usize {
    let off = c * (c - 1) / 2;
    if opts.include_diagonal {
        off + c
    } else {
        off
    }
}

/// Sum of absolute covariances of the selected pairs for one site's Gram
/// matrix.
fn site_cost(gram: &Array2<f64>, c: usize, opts: &DecorrOptions, inv_n: f64) -> f64 {
    let scale = if opts.normalize { inv_n } else { 1.0 };
    let mut acc = 0.0;
    for u in 0..c {
        if opts.include_diagonal {
            acc += (gram[[u, u]] * scale).abs();
        }
        for v in (u + 1)..c {
            acc += (gram[[u, v]] * scale).abs();
        }
    }
    acc
}

/// Per-site decorrelation cost, shape `(H, W)`.
pub fn spatial_correlation_cost(f: &LatentTensor, opts: &DecorrOptions) -> Result<Array2<f64>> {
    let (n, c, h, w) = f.dim();
    let means = batch_means(f);
    let x = centered_by_site(f, &means);
    let inv_n = 1.0 / n as f64;

    let mut cost = Array2::<f64>::zeros((h, w));
    {
        let mut cells: Vec<&mut f64> = cost
            .as_slice_mut()
            .expect("standard layout")
            .iter_mut()
            .collect();
        par::for_each_mut(&mut cells, |site, cell| {
            let xs = x.index_axis(ndarray::Axis(0), site);
            let gram = xs.t().dot(&xs);
            **cell = site_cost(&gram, c, opts, inv_n);
        });
    }
    Ok(cost)
}

/// Decorrelation loss: the per-site cost summed over all sites.
pub fn decorrelation_loss(f: &LatentTensor, opts: &DecorrOptions) -> Result<f64> {
    Ok(loss_and_gradient_impl(f, opts, false)?.0)
}

/// Exact gradient of [`decorrelation_loss`] with respect to the input,
/// same shape as the input. Subgradient 0 wherever a covariance sits exactly
/// at the |·| kink.
pub fn decorrelation_loss_gradient(f: &LatentTensor, opts: &DecorrOptions) -> Result<LatentTensor> {
    let (_, grad) = loss_and_gradient_impl(f, opts, true)?;
    Ok(LatentTensor::from_validated(grad.expect("requested")))
}

/// Loss and gradient in one pass; the training loop uses this fused form.
pub fn loss_and_gradient(f: &LatentTensor, opts: &DecorrOptions) -> Result<(f64, LatentTensor)> {
    let (loss, grad) = loss_and_gradient_impl(f, opts, true)?;
    Ok((loss, LatentTensor::from_validated(grad.expect("requested"))))
}

/// Forced-sequential twin of [`loss_and_gradient`]; the bench suite compares
/// the two paths, which are bit-identical by construction.
#[doc(hidden)]
pub fn loss_and_gradient_seq(
    f: &LatentTensor,
    opts: &DecorrOptions,
) -> Result<(f64, LatentTensor)> {
    let (loss, grad) = loss_and_gradient_dispatch(f, opts, true, true)?;
    Ok((loss, LatentTensor::from_validated(grad.expect("requested"))))
}

fn loss_and_gradient_impl(
    f: &LatentTensor,
    opts: &DecorrOptions,
    want_grad: bool,
) -> Result<(f64, Option<Array4<f64>>)> {
    loss_and_gradient_dispatch(f, opts, want_grad, false)
}

fn loss_and_gradient_dispatch(
    f: &LatentTensor,
    opts: &DecorrOptions,
    want_grad: bool,
    sequential: bool,
) -> Result<(f64, Option<Array4<f64>>)> {
    let (n, c, h, w) = f.dim();
    let pairs = pair_count(c, opts);
    if pairs == 0 {
        let grad = want_grad.then(|| Array4::zeros((n, c, h, w)));
        return Ok((0.0, grad));
    }

    let means = batch_means(f);
    let x = centered_by_site(f, &means);
    let inv_n = 1.0 / n as f64;
    // With normalization the loss is sum_{sites} sum_{pairs} |G_uv / N| / (H W P),
    // so every site term (and its gradient) carries one global factor.
    let site_scale = if opts.normalize {
        inv_n / (h as f64 * w as f64 * pairs as f64)
    } else {
        1.0
    };

    let sites = h * w;
    let mut cost = vec![0.0f64; sites];
    let mut grad_sites = if want_grad {
        Some(Array3::<f64>::zeros((sites, n, c)))
    } else {
        None
    };

    {
        enum Slot<'a> {
            LossOnly(&'a mut f64),
            WithGrad(&'a mut f64, &'a mut [f64]),
        }
        let mut slots: Vec<Slot> = match grad_sites.as_mut() {
            Some(gs) => cost
                .iter_mut()
                .zip(gs.as_slice_mut().expect("standard layout").chunks_mut(n * c))
                .map(|(c0, g0)| Slot::WithGrad(c0, g0))
                .collect(),
            None => cost.iter_mut().map(Slot::LossOnly).collect(),
        };
        let work = |site: usize, slot: &mut Slot<'_>| {
            let xs = x.index_axis(ndarray::Axis(0), site);
            let gram = xs.t().dot(&xs);
            let (cell, grad_out): (&mut f64, Option<&mut [f64]>) = match slot {
                Slot::LossOnly(c0) => (&mut **c0, None),
                Slot::WithGrad(c0, g0) => (&mut **c0, Some(&mut **g0)),
            };

            let mut acc = 0.0;
            let mut sign = Array2::<f64>::zeros((c, c));
            for u in 0..c {
                if opts.include_diagonal {
                    let g = gram[[u, u]];
                    acc += g.abs();
                    // d|G_uu|/dX contributes twice through both factors.
                    sign[[u, u]] = 2.0 * g.signum_or_zero();
                }
                for v in (u + 1)..c {
                    let g = gram[[u, v]];
                    acc += g.abs();
                    let s = g.signum_or_zero();
                    sign[[u, v]] = s;
                    sign[[v, u]] = s;
                }
            }
            *cell = acc * site_scale;

            if let Some(gbuf) = grad_out {
                let grad = xs.dot(&sign);
                let src = grad.as_slice().expect("standard layout");
                for (dst, s) in gbuf.iter_mut().zip(src) {
                    *dst = s * site_scale;
                }
            }
        };
        if sequential {
            par::for_each_mut_seq(&mut slots, work);
        } else {
            par::for_each_mut(&mut slots, work);
        }
    }

    // Fixed-order reduction keeps the result independent of scheduling.
    let loss: f64 = cost.iter().sum();

    let grad = grad_sites.map(|gs| {
        let mut out = Array4::<f64>::zeros((n, c, h, w));
        for hi in 0..h {
            for wi in 0..w {
                let site = hi * w + wi;
                for ni in 0..n {
                    for ci in 0..c {
                        out[[ni, ci, hi, wi]] = gs[[site, ni, ci]];
                    }
                }
            }
        }
        out
    });

    Ok((loss, grad))
}

/// Scalar channel-redundancy summary of a latent: absolute Pearson
/// correlation between every unordered channel pair, with all `(batch,
/// height, width)` entries of a channel treated as its observations.
///
/// Intended for single-image latents; zero-variance channels contribute 0.
/// The result lies in `[0, C·(C−1)/2]`.
pub fn correlation_sum(f: &LatentTensor) -> Result<f64> {
    let (n, c, h, w) = f.dim();
    let m = n * h * w;
    let data = f.view();

    let mut means = vec![0.0f64; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..w {
                    acc += data[[ni, ci, hi, wi]];
                }
            }
        }
        means[ci] = acc / m as f64;
    }

    let mut x = Array2::<f64>::zeros((m, c));
    for ci in 0..c {
        let mut row = 0;
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..w {
                    x[[row, ci]] = data[[ni, ci, hi, wi]] - means[ci];
                    row += 1;
                }
            }
        }
    }
    let gram = x.t().dot(&x);

    let mut total = 0.0;
    for u in 0..c {
        let var_u = gram[[u, u]];
        if is_degenerate(var_u, means[u], m) {
            continue;
        }
        for v in (u + 1)..c {
            let var_v = gram[[v, v]];
            if is_degenerate(var_v, means[v], m) {
                continue;
            }
            let corr = gram[[u, v]] / (var_u * var_v).sqrt();
            total += corr.abs().min(1.0);
        }
    }
    Ok(total)
}

/// A channel whose centered energy is at rounding-noise level has no
/// meaningful correlation; its pairs contribute 0 rather than NaN.
fn is_degenerate(var: f64, mean: f64, m: usize) -> bool {
    var <= 1e-20 * m as f64 * (1.0 + mean * mean)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array4;
    use rand::Rng;

    fn latent(data: Array4<f64>) -> LatentTensor {
        LatentTensor::new(data).unwrap()
    }

    /// Literal transcription of the covariance/cost definition with scalar
    /// loops; the independent oracle for the vectorized path.
    pub(crate) fn oracle_loss(f: &LatentTensor, opts: &DecorrOptions) -> f64 {
        let (n, c, h, w) = f.dim();
        let data = f.view();
        let pairs = pair_count(c, opts);
        if pairs == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for hi in 0..h {
            for wi in 0..w {
                let mut site = 0.0;
                for u in 0..c {
                    for v in 0..c {
                        let in_scope = if opts.include_diagonal { v >= u } else { v > u };
                        if !in_scope {
                            continue;
                        }
                        let mean_u: f64 =
                            (0..n).map(|i| data[[i, u, hi, wi]]).sum::<f64>() / n as f64;
                        let mean_v: f64 =
                            (0..n).map(|i| data[[i, v, hi, wi]]).sum::<f64>() / n as f64;
                        let mut cov = 0.0;
                        for i in 0..n {
                            cov += (data[[i, u, hi, wi]] - mean_u) * (data[[i, v, hi, wi]] - mean_v);
                        }
                        if opts.normalize {
                            cov /= n as f64;
                        }
                        site += cov.abs();
                    }
                }
                total += site;
            }
        }
        if opts.normalize {
            total /= (h * w * pairs) as f64;
        }
        total
    }

    fn two_by_two() -> LatentTensor {
        // N=2, C=2, H=W=1: channel 1 = [1, -1], channel 2 = [2, 0].
        let mut a = Array4::zeros((2, 2, 1, 1));
        a[[0, 0, 0, 0]] = 1.0;
        a[[1, 0, 0, 0]] = -1.0;
        a[[0, 1, 0, 0]] = 2.0;
        a[[1, 1, 0, 0]] = 0.0;
        latent(a)
    }

    fn random_latent(rng: &mut impl Rng, n: usize, c: usize, h: usize, w: usize) -> LatentTensor {
        let mut a = Array4::zeros((n, c, h, w));
        for v in a.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        latent(a)
    }

    #[test]
    fn covariance_known_values() {
        let f = two_by_two();
        let field = channel_covariance(&f).unwrap();
        assert_relative_eq!(field.values[[0, 0, 0, 0]], 2.0);
        assert_relative_eq!(field.values[[0, 0, 1, 1]], 2.0);
        assert_relative_eq!(field.values[[0, 0, 0, 1]], 2.0);
        assert_relative_eq!(field.values[[0, 0, 1, 0]], 2.0);
        assert_relative_eq!(field.means[[0, 0, 0]], 0.0);
        assert_relative_eq!(field.means[[1, 0, 0]], 1.0);
    }

    #[test]
    fn covariance_single_sample_is_zero() {
        let mut rng = crate::rng::stream(11, "test", 0);
        let f = random_latent(&mut rng, 1, 5, 3, 4);
        let field = channel_covariance(&f).unwrap();
        assert!(field.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn covariance_constant_channel_row_is_zero() {
        // N=2 so centering a constant channel is exact.
        let mut rng = crate::rng::stream(12, "test", 0);
        let mut a = Array4::zeros((2, 3, 2, 2));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for hi in 0..2 {
            for wi in 0..2 {
                a[[0, 1, hi, wi]] = 0.37;
                a[[1, 1, hi, wi]] = 0.37;
            }
        }
        let field = channel_covariance(&latent(a)).unwrap();
        for hi in 0..2 {
            for wi in 0..2 {
                for c in 0..3 {
                    assert_eq!(field.values[[hi, wi, 1, c]], 0.0);
                    assert_eq!(field.values[[hi, wi, c, 1]], 0.0);
                }
            }
        }
    }

    #[test]
    fn covariance_symmetry_random() {
        let mut rng = crate::rng::stream(13, "test", 0);
        let f = random_latent(&mut rng, 4, 6, 3, 3);
        let field = channel_covariance(&f).unwrap();
        for hi in 0..3 {
            for wi in 0..3 {
                for u in 0..6 {
                    assert!(field.values[[hi, wi, u, u]] >= 0.0);
                    for v in 0..6 {
                        assert_eq!(field.values[[hi, wi, u, v]], field.values[[hi, wi, v, u]]);
                    }
                }
            }
        }
    }

    #[test]
    fn cost_known_values() {
        let f = two_by_two();
        let cost = spatial_correlation_cost(&f, &DecorrOptions::default()).unwrap();
        assert_relative_eq!(cost[[0, 0]], 2.0);

        let with_diag = DecorrOptions {
            include_diagonal: true,
            ..Default::default()
        };
        let cost = spatial_correlation_cost(&f, &with_diag).unwrap();
        assert_relative_eq!(cost[[0, 0]], 6.0);
    }

    #[test]
    fn cost_single_sample_zero() {
        let mut rng = crate::rng::stream(14, "test", 0);
        let f = random_latent(&mut rng, 1, 4, 2, 5);
        let cost = spatial_correlation_cost(&f, &DecorrOptions::default()).unwrap();
        assert!(cost.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_tiled_example() {
        // The 2x2 single-site example tiled over H=W=2: 4 sites x cost 2.
        let mut a = Array4::zeros((2, 2, 2, 2));
        for hi in 0..2 {
            for wi in 0..2 {
                a[[0, 0, hi, wi]] = 1.0;
                a[[1, 0, hi, wi]] = -1.0;
                a[[0, 1, hi, wi]] = 2.0;
                a[[1, 1, hi, wi]] = 0.0;
            }
        }
        let loss = decorrelation_loss(&latent(a), &DecorrOptions::default()).unwrap();
        assert_relative_eq!(loss, 8.0);
    }

    #[test]
    fn loss_matches_oracle_random() {
        let mut rng = crate::rng::stream(15, "test", 0);
        let f = random_latent(&mut rng, 4, 8, 4, 4);
        for opts in [
            DecorrOptions::default(),
            DecorrOptions {
                include_diagonal: true,
                normalize: false,
            },
            DecorrOptions {
                include_diagonal: false,
                normalize: true,
            },
            DecorrOptions {
                include_diagonal: true,
                normalize: true,
            },
        ] {
            let fast = decorrelation_loss(&f, &opts).unwrap();
            let slow = oracle_loss(&f, &opts);
            assert_relative_eq!(fast, slow, max_relative = 1e-6);
        }
    }

    #[test]
    fn gradient_single_sample_zero() {
        let mut rng = crate::rng::stream(16, "test", 0);
        let f = random_latent(&mut rng, 1, 4, 3, 3);
        let g = decorrelation_loss_gradient(&f, &DecorrOptions::default()).unwrap();
        assert!(g.view().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(17, "test", 0);
        let opts = DecorrOptions::default();
        let f = random_latent(&mut rng, 4, 6, 3, 3);
        let grad = decorrelation_loss_gradient(&f, &opts).unwrap();

        let field = channel_covariance(&f).unwrap();
        let (n, c, h, w) = f.dim();
        let step = 1e-3;
        let mut checked = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        // Skip coordinates near a |.| kink where central
                        // differences straddle the nondifferentiable point.
                        let near_kink = (0..c).any(|v| {
                            v != ci && field.values[[hi, wi, ci, v]].abs() < 1e-6
                        });
                        if near_kink {
                            continue;
                        }
                        let mut plus = f.as_array().clone();
                        plus[[ni, ci, hi, wi]] += step;
                        let mut minus = f.as_array().clone();
                        minus[[ni, ci, hi, wi]] -= step;
                        let lp = decorrelation_loss(&latent(plus), &opts).unwrap();
                        let lm = decorrelation_loss(&latent(minus), &opts).unwrap();
                        let fd = (lp - lm) / (2.0 * step);
                        let an = grad.view()[[ni, ci, hi, wi]];
                        let denom = fd.abs().max(an.abs()).max(1e-8);
                        assert!(
                            (fd - an).abs() / denom <= 1e-4,
                            "fd {fd} vs analytic {an} at ({ni},{ci},{hi},{wi})"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 50, "too few coordinates checked: {checked}");
    }

    #[test]
    fn gradient_duplicated_channels_symmetric() {
        let mut rng = crate::rng::stream(18, "test", 0);
        let (n, h, w) = (4, 2, 2);
        let mut a = Array4::zeros((n, 4, h, w));
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..w {
                    let p: f64 = rng.random_range(-1.0..1.0);
                    let q: f64 = rng.random_range(-1.0..1.0);
                    a[[ni, 0, hi, wi]] = p;
                    a[[ni, 1, hi, wi]] = p;
                    a[[ni, 2, hi, wi]] = q;
                    a[[ni, 3, hi, wi]] = q;
                }
            }
        }
        let g = decorrelation_loss_gradient(&latent(a), &DecorrOptions::default()).unwrap();
        let gv = g.view();
        let mut nonzero = false;
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..w {
                    assert_eq!(gv[[ni, 0, hi, wi]], gv[[ni, 1, hi, wi]]);
                    assert_eq!(gv[[ni, 2, hi, wi]], gv[[ni, 3, hi, wi]]);
                    nonzero |= gv[[ni, 0, hi, wi]] != 0.0;
                }
            }
        }
        assert!(nonzero, "gradient should not vanish on correlated input");
    }

    #[test]
    fn correlation_sum_identical_channels() {
        let mut rng = crate::rng::stream(19, "test", 0);
        let c = 5;
        let (h, w) = (6, 6);
        let mut a = Array4::zeros((1, c, h, w));
        for hi in 0..h {
            for wi in 0..w {
                let v: f64 = rng.random_range(-1.0..1.0);
                for ci in 0..c {
                    a[[0, ci, hi, wi]] = v;
                }
            }
        }
        let s = correlation_sum(&latent(a)).unwrap();
        let expect = (c * (c - 1) / 2) as f64;
        assert_relative_eq!(s, expect, max_relative = 1e-9);
    }

    #[test]
    fn correlation_sum_independent_noise_small() {
        let mut rng = crate::rng::stream(20, "test", 0);
        let c = 8;
        let f = random_latent(&mut rng, 1, c, 48, 48);
        let s = correlation_sum(&f).unwrap();
        let bound = 0.1 * (c * (c - 1) / 2) as f64;
        assert!(s < bound, "noise channels should decorrelate: {s} >= {bound}");
    }

    #[test]
    fn correlation_sum_zero_variance_channel() {
        let mut rng = crate::rng::stream(21, "test", 0);
        let mut a = Array4::zeros((1, 3, 4, 4));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for hi in 0..4 {
            for wi in 0..4 {
                a[[0, 1, hi, wi]] = 0.25;
            }
        }
        let s = correlation_sum(&latent(a)).unwrap();
        assert!(s.is_finite());
        assert!(s <= 1.0 + 1e-12, "only the (0,2) pair may contribute: {s}");
    }

    #[test]
    fn correlation_sum_multi_sample_batch() {
        let mut rng = crate::rng::stream(22, "test", 0);
        let f = random_latent(&mut rng, 3, 4, 5, 5);
        let s = correlation_sum(&f).unwrap();
        assert!(s.is_finite() && s >= 0.0 && s <= 6.0);
    }
}
