//! Convolution primitives with hand-written backward passes.
//!
//! Convolutions are lowered to GEMM via im2col/col2im; transposed
//! convolutions reuse the same lowering through the usual duality (their
//! forward pass is the conv input-gradient and vice versa). Batch samples are
//! processed in parallel; per-sample weight-gradient contributions are
//! reduced in batch order so results do not depend on scheduling.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::par;

/// Border handling for convolution padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    Zero,
    /// Clamp source coordinates to the border. Keeps stride-1 convolutions
    /// exactly translation-invariant on constant inputs.
    Replicate,
}

/// Geometry of a strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl ConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

/// Geometry of a strided transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl TConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel + self.out_pad - 2 * self.pad,
            (w - 1) * self.stride + self.kernel + self.out_pad - 2 * self.pad,
        )
    }

    /// Geometry of the ordinary convolution this layer is dual to.
    fn dual(&self) -> ConvShape {
        ConvShape {
            c_in: self.c_out,
            c_out: self.c_in,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            pad_mode: PadMode::Zero,
        }
    }
}

/// Convolution layer; weight is stored GEMM-ready as `(C_out, C_in·k·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub shape: ConvShape,
}

/// Transposed convolution layer; weight is `(C_in, C_out·k·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub shape: TConvShape,
}

/// Column range `[lo, hi)` of output positions whose source index
/// `o*stride + off` lands inside `[0, bound)`.
fn inbound_range(off: isize, stride: usize, bound: usize, out_len: usize) -> (usize, usize) {
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(stride)
    } else {
        0
    };
    let hi = if (bound as isize) > off {
        (((bound as isize - 1 - off) / stride as isize) + 1)
            .clamp(0, out_len as isize) as usize
    } else {
        0
    };
    (lo.min(out_len), hi.max(lo).min(out_len))
}

/// Gathers padded patches: `(C·k·k, Ho·Wo)` column matrix.
fn im2col(src: ArrayView3<f64>, sh: &ConvShape, cols: &mut Array2<f64>) {
    let (c, h, w) = src.dim();
    let (ho, wo) = sh.out_size(h, w);
    debug_assert_eq!(cols.dim(), (c * sh.kernel * sh.kernel, ho * wo));
    let k = sh.kernel;
    let st = sh.stride;
    let pad = sh.pad as isize;
    let data = src.as_slice().expect("contiguous channel view");
    let cols_slice = cols.as_slice_mut().expect("standard layout");
    let n_pos = ho * wo;
    for ci in 0..c {
        let src_ch = &data[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            let u_off = u as isize - pad;
            for v in 0..k {
                let v_off = v as isize - pad;
                let row = (ci * k + u) * k + v;
                let out_row = &mut cols_slice[row * n_pos..(row + 1) * n_pos];
                let (lo, hi) = inbound_range(v_off, st, w, wo);
                for oi in 0..ho {
                    let si = (oi * st) as isize + u_off;
                    let dst = &mut out_row[oi * wo..oi * wo + wo];
                    let row_in = si >= 0 && si < h as isize;
                    if !row_in && sh.pad_mode == PadMode::Zero {
                        dst.fill(0.0);
                        continue;
                    }
                    let si = si.clamp(0, h as isize - 1) as usize;
                    let src_row = &src_ch[si * w..si * w + w];
                    match sh.pad_mode {
                        PadMode::Zero => {
                            dst[..lo].fill(0.0);
                            let start = (lo * st) as isize + v_off;
                            copy_strided(&mut dst[lo..hi], src_row, start as usize, st);
                            dst[hi..].fill(0.0);
                        }
                        PadMode::Replicate => {
                            for (oj, d) in dst[..lo].iter_mut().enumerate() {
                                let sj = (oj * st) as isize + v_off;
                                *d = src_row[sj.clamp(0, w as isize - 1) as usize];
                            }
                            let start = (lo * st) as isize + v_off;
                            copy_strided(&mut dst[lo..hi], src_row, start as usize, st);
                            for (i, d) in dst[hi..].iter_mut().enumerate() {
                                let sj = ((hi + i) * st) as isize + v_off;
                                *d = src_row[sj.clamp(0, w as isize - 1) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn copy_strided(dst: &mut [f64], src: &[f64], start: usize, stride: usize) {
    if dst.is_empty() {
        return;
    }
    if stride == 1 {
        dst.copy_from_slice(&src[start..start + dst.len()]);
    } else {
        for (d, s) in dst.iter_mut().zip(src[start..].iter().step_by(stride)) {
            *d = *s;
        }
    }
}

#[inline]
fn add_strided(dst: &mut [f64], start: usize, stride: usize, src: &[f64]) {
    if src.is_empty() {
        return;
    }
    if stride == 1 {
        for (d, s) in dst[start..start + src.len()].iter_mut().zip(src) {
            *d += *s;
        }
    } else {
        for (d, s) in dst[start..].iter_mut().step_by(stride).zip(src) {
            *d += *s;
        }
    }
}

/// Scatter-adds a column matrix back onto an image; the adjoint of [`im2col`].
fn col2im(cols: ArrayView2<f64>, sh: &ConvShape, dst: &mut ndarray::ArrayViewMut3<f64>) {
    let (c, h, w) = dst.dim();
    let (ho, wo) = sh.out_size(h, w);
    debug_assert_eq!(cols.dim(), (c * sh.kernel * sh.kernel, ho * wo));
    let k = sh.kernel;
    let st = sh.stride;
    let pad = sh.pad as isize;
    let cols_slice = cols.as_slice().expect("standard layout");
    let data = dst.as_slice_mut().expect("contiguous output view");
    let n_pos = ho * wo;
    for ci in 0..c {
        let dst_ch = &mut data[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            let u_off = u as isize - pad;
            for v in 0..k {
                let v_off = v as isize - pad;
                let row = (ci * k + u) * k + v;
                let src_row_full = &cols_slice[row * n_pos..(row + 1) * n_pos];
                let (lo, hi) = inbound_range(v_off, st, w, wo);
                for oi in 0..ho {
                    let si = (oi * st) as isize + u_off;
                    let src = &src_row_full[oi * wo..oi * wo + wo];
                    let row_in = si >= 0 && si < h as isize;
                    if !row_in && sh.pad_mode == PadMode::Zero {
                        continue;
                    }
                    let si = si.clamp(0, h as isize - 1) as usize;
                    let dst_row = &mut dst_ch[si * w..si * w + w];
                    match sh.pad_mode {
                        PadMode::Zero => {
                            let start = (lo * st) as isize + v_off;
                            add_strided(dst_row, start as usize, st, &src[lo..hi]);
                        }
                        PadMode::Replicate => {
                            for (oj, s) in src[..lo].iter().enumerate() {
                                let sj = (oj * st) as isize + v_off;
                                dst_row[sj.clamp(0, w as isize - 1) as usize] += *s;
                            }
                            let start = (lo * st) as isize + v_off;
                            add_strided(dst_row, start as usize, st, &src[lo..hi]);
                            for (i, s) in src[hi..].iter().enumerate() {
                                let sj = ((hi + i) * st) as isize + v_off;
                                dst_row[sj.clamp(0, w as isize - 1) as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[doc(hidden)]
pub fn conv2d_forward(x: &Array4<f64>, layer: &Conv2d) -> Array4<f64> {
    conv2d_forward_impl(x, layer, false)
}

#[doc(hidden)]
pub fn conv2d_forward_seq(x: &Array4<f64>, layer: &Conv2d) -> Array4<f64> {
    conv2d_forward_impl(x, layer, true)
}

fn conv2d_forward_impl(x: &Array4<f64>, layer: &Conv2d, sequential: bool) -> Array4<f64> {
    let sh = &layer.shape;
    let (n, c_in, h, w) = x.dim();
    debug_assert_eq!(c_in, sh.c_in);
    let (ho, wo) = sh.out_size(h, w);
    let mut out = Array4::<f64>::zeros((n, sh.c_out, ho, wo));
    let mut planes: Vec<_> = out.outer_iter_mut().collect();
    let work = |ni: usize, plane: &mut ndarray::ArrayViewMut3<'_, f64>| {
        let mut cols = Array2::<f64>::zeros((sh.c_in * sh.kernel * sh.kernel, ho * wo));
        im2col(x.index_axis(ndarray::Axis(0), ni), sh, &mut cols);
        let mat = layer.weight.dot(&cols);
        for co in 0..sh.c_out {
            let b = layer.bias[co];
            for (dst, src) in plane
                .index_axis_mut(ndarray::Axis(0), co)
                .iter_mut()
                .zip(mat.index_axis(ndarray::Axis(0), co).iter())
            {
                *dst = src + b;
            }
        }
    };
    if sequential {
        par::for_each_mut_seq(&mut planes, work);
    } else {
        par::for_each_mut(&mut planes, work);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Array4<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

pub(crate) fn conv2d_backward(x: &Array4<f64>, layer: &Conv2d, g: &Array4<f64>) -> ConvGrads {
    let sh = &layer.shape;
    let (n, _, h, w) = x.dim();
    let (ho, wo) = sh.out_size(h, w);
    debug_assert_eq!(g.dim(), (n, sh.c_out, ho, wo));

    let mut dx = Array4::<f64>::zeros(x.dim());
    let mut per_sample: Vec<(ndarray::ArrayViewMut3<f64>, Array2<f64>, Array1<f64>)> = dx
        .outer_iter_mut()
        .map(|dxn| {
            (
                dxn,
                Array2::zeros(layer.weight.dim()),
                Array1::zeros(layer.bias.dim()),
            )
        })
        .collect();

    par::for_each_mut(&mut per_sample, |ni, (dxn, dwn, dbn)| {
        let g_n = g.index_axis(ndarray::Axis(0), ni);
        let g_mat = g_n
            .to_shape((sh.c_out, ho * wo))
            .expect("contiguous gradient");

        let mut cols = Array2::<f64>::zeros((sh.c_in * sh.kernel * sh.kernel, ho * wo));
        im2col(x.index_axis(ndarray::Axis(0), ni), sh, &mut cols);
        *dwn = g_mat.dot(&cols.t());

        for co in 0..sh.c_out {
            dbn[co] = g_mat.index_axis(ndarray::Axis(0), co).sum();
        }

        let dcols = layer.weight.t().dot(&g_mat);
        col2im(dcols.view(), sh, dxn);
    });

    let mut dw = Array2::<f64>::zeros(layer.weight.dim());
    let mut db = Array1::<f64>::zeros(layer.bias.dim());
    for (_, dwn, dbn) in &per_sample {
        dw += dwn;
        db += dbn;
    }
    drop(per_sample);
    ConvGrads { dx, dw, db }
}

#[doc(hidden)]
pub fn tconv2d_forward(x: &Array4<f64>, layer: &ConvTranspose2d) -> Array4<f64> {
    tconv2d_forward_impl(x, layer, false)
}

#[doc(hidden)]
pub fn tconv2d_forward_seq(x: &Array4<f64>, layer: &ConvTranspose2d) -> Array4<f64> {
    tconv2d_forward_impl(x, layer, true)
}

fn tconv2d_forward_impl(x: &Array4<f64>, layer: &ConvTranspose2d, sequential: bool) -> Array4<f64> {
    let sh = &layer.shape;
    let (n, c_in, h, w) = x.dim();
    debug_assert_eq!(c_in, sh.c_in);
    let (ho, wo) = sh.out_size(h, w);
    let dual = sh.dual();
    let mut out = Array4::<f64>::zeros((n, sh.c_out, ho, wo));
    let mut planes: Vec<_> = out.outer_iter_mut().collect();
    let work = |ni: usize, plane: &mut ndarray::ArrayViewMut3<'_, f64>| {
        let x_n = x.index_axis(ndarray::Axis(0), ni);
        let x_mat = x_n.to_shape((sh.c_in, h * w)).expect("contiguous input");
        // Columns of the dual conv: scattering them realizes the upsampling.
        let cols = layer.weight.t().dot(&x_mat);
        col2im(cols.view(), &dual, plane);
        for co in 0..sh.c_out {
            let b = layer.bias[co];
            plane
                .index_axis_mut(ndarray::Axis(0), co)
                .iter_mut()
                .for_each(|t| *t += b);
        }
    };
    if sequential {
        par::for_each_mut_seq(&mut planes, work);
    } else {
        par::for_each_mut(&mut planes, work);
    }
    out
}

pub(crate) struct TConvGrads {
    pub dx: Array4<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

pub(crate) fn tconv2d_backward(
    x: &Array4<f64>,
    layer: &ConvTranspose2d,
    g: &Array4<f64>,
) -> TConvGrads {
    let sh = &layer.shape;
    let (n, _, h, w) = x.dim();
    let (ho, wo) = sh.out_size(h, w);
    debug_assert_eq!(g.dim(), (n, sh.c_out, ho, wo));
    let dual = sh.dual();

    let mut dx = Array4::<f64>::zeros(x.dim());
    let mut per_sample: Vec<(ndarray::ArrayViewMut3<f64>, Array2<f64>, Array1<f64>)> = dx
        .outer_iter_mut()
        .map(|dxn| {
            (
                dxn,
                Array2::zeros(layer.weight.dim()),
                Array1::zeros(layer.bias.dim()),
            )
        })
        .collect();

    par::for_each_mut(&mut per_sample, |ni, (dxn, dwn, dbn)| {
        let g_n = g.index_axis(ndarray::Axis(0), ni);
        let mut g_cols = Array2::<f64>::zeros((sh.c_out * sh.kernel * sh.kernel, h * w));
        im2col(g_n, &dual, &mut g_cols);

        // dX = W · im2col(g); dW = X · im2col(g)^T.
        let dx_mat = layer.weight.dot(&g_cols);
        let dx_view = dx_mat
            .into_shape_with_order((sh.c_in, h, w))
            .expect("contiguous");
        dxn.assign(&dx_view);

        let x_n = x.index_axis(ndarray::Axis(0), ni);
        let x_mat = x_n.to_shape((sh.c_in, h * w)).expect("contiguous input");
        *dwn = x_mat.dot(&g_cols.t());

        for co in 0..sh.c_out {
            dbn[co] = g_n.index_axis(ndarray::Axis(0), co).sum();
        }
    });

    let mut dw = Array2::<f64>::zeros(layer.weight.dim());
    let mut db = Array1::<f64>::zeros(layer.bias.dim());
    for (_, dwn, dbn) in &per_sample {
        dw += dwn;
        db += dbn;
    }
    drop(per_sample);
    TConvGrads { dx, dw, db }
}

/// Nearest-neighbor 2x upsampling.
pub(crate) fn upsample2x(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::<f64>::zeros((n, c, 2 * h, 2 * w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[[ni, ci, i, j]] = x[[ni, ci, i / 2, j / 2]];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: each source cell collects its four replicas.
pub(crate) fn upsample2x_backward(g: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = g.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[[ni, ci, i / 2, j / 2]] += g[[ni, ci, i, j]];
                }
            }
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth gating nonlinearity `x·sigmoid(x)`.
pub(crate) fn silu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v * sigmoid(v))
}

/// Derivative of [`silu`] evaluated at the pre-activation.
pub(crate) fn silu_grad(pre: &Array4<f64>) -> Array4<f64> {
    pre.mapv(|v| {
        let s = sigmoid(v);
        s * (1.0 + v * (1.0 - s))
    })
}

/// `x / (1 + |x|)`: smooth, bounded and exp-free; the default stage
/// nonlinearity.
pub(crate) fn softsign(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v / (1.0 + v.abs()))
}

/// Derivative of [`softsign`] at the pre-activation.
pub(crate) fn softsign_grad(pre: &Array4<f64>) -> Array4<f64> {
    pre.mapv(|v| {
        let d = 1.0 + v.abs();
        1.0 / (d * d)
    })
}

/// `ln(1 + e^x)`, overflow-safe.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

/// Inverse of [`softplus`]; used to bias scale heads toward a target value.
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2, Array4};
    use rand::Rng;

    fn rand_array4(rng: &mut impl Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut a = Array4::zeros(d);
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        a
    }

    fn rand_conv(rng: &mut impl Rng, sh: ConvShape) -> Conv2d {
        let mut weight = Array2::zeros((sh.c_out, sh.c_in * sh.kernel * sh.kernel));
        for v in weight.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let mut bias = Array1::zeros(sh.c_out);
        for v in bias.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        Conv2d { weight, bias, shape: sh }
    }

    fn rand_tconv(rng: &mut impl Rng, sh: TConvShape) -> ConvTranspose2d {
        let mut weight = Array2::zeros((sh.c_in, sh.c_out * sh.kernel * sh.kernel));
        for v in weight.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let mut bias = Array1::zeros(sh.c_out);
        for v in bias.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        ConvTranspose2d { weight, bias, shape: sh }
    }

    /// Direct nested-loop convolution; reference for the GEMM path.
    fn conv_reference(x: &Array4<f64>, layer: &Conv2d) -> Array4<f64> {
        let sh = &layer.shape;
        let (n, _, h, w) = x.dim();
        let (ho, wo) = sh.out_size(h, w);
        let k = sh.kernel;
        let mut out = Array4::zeros((n, sh.c_out, ho, wo));
        for ni in 0..n {
            for co in 0..sh.c_out {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut acc = layer.bias[co];
                        for ci in 0..sh.c_in {
                            for u in 0..k {
                                for v in 0..k {
                                    let si = (oi * sh.stride + u) as isize - sh.pad as isize;
                                    let sj = (oj * sh.stride + v) as isize - sh.pad as isize;
                                    let outside =
                                        si < 0 || sj < 0 || si >= h as isize || sj >= w as isize;
                                    if outside && sh.pad_mode == PadMode::Zero {
                                        continue;
                                    }
                                    let si = si.clamp(0, h as isize - 1) as usize;
                                    let sj = sj.clamp(0, w as isize - 1) as usize;
                                    acc += x[[ni, ci, si, sj]]
                                        * layer.weight[[co, (ci * k + u) * k + v]];
                                }
                            }
                        }
                        out[[ni, co, oi, oj]] = acc;
                    }
                }
            }
        }
        out
    }

    /// Zero-stuffing reference for transposed convolution.
    fn tconv_reference(x: &Array4<f64>, layer: &ConvTranspose2d) -> Array4<f64> {
        let sh = &layer.shape;
        let (n, _, h, w) = x.dim();
        let (ho, wo) = sh.out_size(h, w);
        let k = sh.kernel;
        let mut out = Array4::zeros((n, sh.c_out, ho, wo));
        for ni in 0..n {
            for co in 0..sh.c_out {
                for oi in 0..ho {
                    for oj in 0..wo {
                        out[[ni, co, oi, oj]] = layer.bias[co];
                    }
                }
            }
            for ci in 0..sh.c_in {
                for i in 0..h {
                    for j in 0..w {
                        for u in 0..k {
                            for v in 0..k {
                                let ti = (i * sh.stride + u) as isize - sh.pad as isize;
                                let tj = (j * sh.stride + v) as isize - sh.pad as isize;
                                if ti < 0 || tj < 0 || ti >= ho as isize || tj >= wo as isize {
                                    continue;
                                }
                                for co in 0..sh.c_out {
                                    out[[ni, co, ti as usize, tj as usize]] += x[[ni, ci, i, j]]
                                        * layer.weight[[ci, (co * k + u) * k + v]];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = crate::rng::stream(31, "nn", 0);
        let sh = ConvShape { c_in: 3, c_out: 5, kernel: 3, stride: 2, pad: 1, pad_mode: PadMode::Zero };
        let layer = rand_conv(&mut rng, sh);
        let x = rand_array4(&mut rng, (2, 3, 9, 7));
        let fast = conv2d_forward(&x, &layer);
        let slow = conv_reference(&x, &layer);
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(fast.dim(), (2, 5, 5, 4));
        let seq = conv2d_forward_seq(&x, &layer);
        assert_eq!(fast, seq);
    }

    #[test]
    fn tconv_matches_reference() {
        let mut rng = crate::rng::stream(32, "nn", 0);
        let sh = TConvShape { c_in: 4, c_out: 3, kernel: 3, stride: 2, pad: 1, out_pad: 1 };
        let layer = rand_tconv(&mut rng, sh);
        let x = rand_array4(&mut rng, (2, 4, 5, 6));
        let fast = tconv2d_forward(&x, &layer);
        let slow = tconv_reference(&x, &layer);
        assert_eq!(fast.dim(), (2, 3, 10, 12));
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let seq = tconv2d_forward_seq(&x, &layer);
        assert_eq!(fast, seq);
    }

    /// Scalar objective for finite-difference checks: weighted sum of outputs.
    fn weighted_sum(out: &Array4<f64>, coeffs: &Array4<f64>) -> f64 {
        out.iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(33, "nn", 0);
        let sh = ConvShape { c_in: 2, c_out: 3, kernel: 3, stride: 2, pad: 1, pad_mode: PadMode::Zero };
        let layer = rand_conv(&mut rng, sh);
        let x = rand_array4(&mut rng, (2, 2, 6, 5));
        let out = conv2d_forward(&x, &layer);
        let coeffs = rand_array4(&mut rng, out.dim());

        let grads = conv2d_backward(&x, &layer, &coeffs);
        let eps = 1e-6;

        for idx in [[0, 0, 0, 0], [1, 1, 3, 2], [0, 1, 5, 4]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (weighted_sum(&conv2d_forward(&xp, &layer), &coeffs)
                - weighted_sum(&conv2d_forward(&xm, &layer), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.dx[idx]).abs() < 1e-6, "dx mismatch at {idx:?}");
        }

        for idx in [[0usize, 0usize], [2, 9], [1, 17]] {
            let mut lp = layer.clone();
            lp.weight[idx] += eps;
            let mut lm = layer.clone();
            lm.weight[idx] -= eps;
            let fd = (weighted_sum(&conv2d_forward(&x, &lp), &coeffs)
                - weighted_sum(&conv2d_forward(&x, &lm), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.dw[idx]).abs() < 1e-6, "dw mismatch at {idx:?}");
        }

        for co in 0..sh.c_out {
            let mut lp = layer.clone();
            lp.bias[co] += eps;
            let mut lm = layer.clone();
            lm.bias[co] -= eps;
            let fd = (weighted_sum(&conv2d_forward(&x, &lp), &coeffs)
                - weighted_sum(&conv2d_forward(&x, &lm), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.db[co]).abs() < 1e-6, "db mismatch at {co}");
        }
    }

    #[test]
    fn tconv_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(34, "nn", 0);
        let sh = TConvShape { c_in: 3, c_out: 2, kernel: 3, stride: 2, pad: 1, out_pad: 1 };
        let layer = rand_tconv(&mut rng, sh);
        let x = rand_array4(&mut rng, (2, 3, 4, 5));
        let out = tconv2d_forward(&x, &layer);
        let coeffs = rand_array4(&mut rng, out.dim());

        let grads = tconv2d_backward(&x, &layer, &coeffs);
        let eps = 1e-6;

        for idx in [[0, 0, 0, 0], [1, 2, 3, 4], [0, 1, 2, 2]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (weighted_sum(&tconv2d_forward(&xp, &layer), &coeffs)
                - weighted_sum(&tconv2d_forward(&xm, &layer), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.dx[idx]).abs() < 1e-6, "dx mismatch at {idx:?}");
        }

        for idx in [[0usize, 0usize], [1, 8], [2, 15]] {
            let mut lp = layer.clone();
            lp.weight[idx] += eps;
            let mut lm = layer.clone();
            lm.weight[idx] -= eps;
            let fd = (weighted_sum(&tconv2d_forward(&x, &lp), &coeffs)
                - weighted_sum(&tconv2d_forward(&x, &lm), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.dw[idx]).abs() < 1e-6, "dw mismatch at {idx:?}");
        }

        for co in 0..sh.c_out {
            let mut lp = layer.clone();
            lp.bias[co] += eps;
            let mut lm = layer.clone();
            lm.bias[co] -= eps;
            let fd = (weighted_sum(&tconv2d_forward(&x, &lp), &coeffs)
                - weighted_sum(&tconv2d_forward(&x, &lm), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.db[co]).abs() < 1e-6, "db mismatch at {co}");
        }
    }

    #[test]
    fn replicate_pad_conv_matches_reference_and_gradients() {
        let mut rng = crate::rng::stream(36, "nn", 0);
        let sh = ConvShape {
            c_in: 2,
            c_out: 3,
            kernel: 3,
            stride: 1,
            pad: 1,
            pad_mode: PadMode::Replicate,
        };
        let layer = rand_conv(&mut rng, sh);
        let x = rand_array4(&mut rng, (2, 2, 5, 4));
        let fast = conv2d_forward(&x, &layer);
        let slow = conv_reference(&x, &layer);
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        // Constant input, stride 1, replicate pad: output is uniform per channel.
        let constant = Array4::from_elem((1, 2, 6, 6), 0.7);
        let out = conv2d_forward(&constant, &layer);
        for co in 0..3 {
            let plane = out.index_axis(ndarray::Axis(0), 0);
            let plane = plane.index_axis(ndarray::Axis(0), co);
            let first = plane[[0, 0]];
            assert!(plane.iter().all(|v| (v - first).abs() < 1e-12));
        }

        // Input gradient via the adjoint must match finite differences at
        // border coordinates, where clamping matters.
        let outd = conv2d_forward(&x, &layer);
        let coeffs = rand_array4(&mut rng, outd.dim());
        let grads = conv2d_backward(&x, &layer, &coeffs);
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 1, 4, 3], [0, 1, 0, 3]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (weighted_sum(&conv2d_forward(&xp, &layer), &coeffs)
                - weighted_sum(&conv2d_forward(&xm, &layer), &coeffs))
                / (2.0 * eps);
            assert!((fd - grads.dx[idx]).abs() < 1e-6, "dx mismatch at {idx:?}");
        }
    }

    #[test]
    fn upsample_round_trip_and_adjoint() {
        let mut rng = crate::rng::stream(37, "nn", 0);
        let x = rand_array4(&mut rng, (1, 2, 3, 4));
        let up = upsample2x(&x);
        assert_eq!(up.dim(), (1, 2, 6, 8));
        for i in 0..6 {
            for j in 0..8 {
                assert_eq!(up[[0, 1, i, j]], x[[0, 1, i / 2, j / 2]]);
            }
        }
        // <upsample(x), g> == <x, upsample_backward(g)>.
        let g = rand_array4(&mut rng, up.dim());
        let lhs: f64 = up.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let back = upsample2x_backward(&g);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn silu_grad_matches_finite_differences() {
        let mut rng = crate::rng::stream(35, "nn", 0);
        let x = rand_array4(&mut rng, (1, 2, 3, 3));
        let g = silu_grad(&x);
        let eps = 1e-6;
        for (idx, v) in x.indexed_iter() {
            let fd = ((v + eps) * sigmoid(v + eps) - (v - eps) * sigmoid(v - eps)) / (2.0 * eps);
            assert!((fd - g[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [0.05, 0.5, 1.0, 3.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9);
        }
    }
}
