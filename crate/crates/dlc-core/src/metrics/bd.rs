//! Bjøntegaard delta metrics on R-D curves.
//!
//! Both deltas interpolate one axis as a monotone piecewise-cubic Hermite
//! function of the other (Fritsch-Carlson slopes) and integrate the
//! difference in closed form over the overlapping interval. BD-Rate
//! integrates log2(bpp) over quality; BD-quality integrates quality over
//! log2(bpp).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered rate-quality curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    /// `(bpp, quality)` points, bpp strictly increasing, quality strictly
    /// increasing with bpp.
    pub points: Vec<(f64, f64)>,
    pub label: String,
}

impl RdCurve {
    pub fn new(points: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        let curve = Self { points, label: label.into() };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 4 {
            return Err(Error::Curve(format!(
                "curve '{}' has {} points; at least 4 are required",
                self.label,
                self.points.len()
            )));
        }
        for pair in self.points.windows(2) {
            let (b0, q0) = pair[0];
            let (b1, q1) = pair[1];
            if !(b1 > b0) {
                return Err(Error::Curve(format!(
                    "curve '{}': bpp must strictly increase ({b0} -> {b1})",
                    self.label
                )));
            }
            if !(q1 > q0) {
                return Err(Error::Curve(format!(
                    "curve '{}': quality must strictly increase with bpp ({q0} -> {q1})",
                    self.label
                )));
            }
        }
        for &(b, q) in &self.points {
            if !(b > 0.0) || !b.is_finite() || !q.is_finite() {
                return Err(Error::Curve(format!(
                    "curve '{}': invalid point ({b}, {q})",
                    self.label
                )));
            }
        }
        Ok(())
    }

    fn quality_range(&self) -> (f64, f64) {
        (self.points[0].1, self.points[self.points.len() - 1].1)
    }

    fn log_rate_range(&self) -> (f64, f64) {
        (
            self.points[0].0.log2(),
            self.points[self.points.len() - 1].0.log2(),
        )
    }
}

/// Monotone piecewise-cubic Hermite interpolant.
pub(crate) struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Endpoint slopes per knot.
    ds: Vec<f64>,
}

impl Pchip {
    /// Fritsch-Carlson slopes; `xs` strictly increasing.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        debug_assert!(n >= 2);
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        let mut ds = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                ds[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        ds[0] = edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        let dn = edge_slope(
            h[n - 2],
            if n >= 3 { h[n - 3] } else { h[n - 2] },
            delta[n - 2],
            if n >= 3 { delta[n - 3] } else { delta[n - 2] },
        );
        ds[n - 1] = dn;

        Self { xs, ys, ds }
    }

    #[cfg_attr(not(test), allow(dead_code))]
    fn segment_of(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 2] {
            return n - 2;
        }
        // Last i with xs[i] <= x.
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment_of(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        self.ys[i] * h00 + h * self.ds[i] * h10 + self.ys[i + 1] * h01 + h * self.ds[i + 1] * h11
    }

    /// Exact integral over `[a, b]` (inside the knot span) using the
    /// antiderivative of the Hermite basis on each covered segment piece.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        let mut acc = 0.0;
        let n = self.xs.len();
        for i in 0..n - 1 {
            let lo = self.xs[i].max(a);
            let hi = self.xs[i + 1].min(b);
            if hi <= lo {
                continue;
            }
            let h = self.xs[i + 1] - self.xs[i];
            let t0 = (lo - self.xs[i]) / h;
            let t1 = (hi - self.xs[i]) / h;
            acc += h * (self.segment_antiderivative(i, t1) - self.segment_antiderivative(i, t0));
        }
        acc
    }

    /// Antiderivative of the segment polynomial in normalized coordinates.
    fn segment_antiderivative(&self, i: usize, t: f64) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let (ih00, ih10, ih01, ih11) = hermite_basis_integrals(t);
        self.ys[i] * ih00 + h * self.ds[i] * ih10 + self.ys[i + 1] * ih01 + h * self.ds[i + 1] * ih11
    }
}

/// Three-point endpoint slope with the usual monotonicity clamps.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg_attr(not(test), allow(dead_code))]
fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Antiderivatives of the basis polynomials at `t` (zero at `t = 0`).
fn hermite_basis_integrals(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    (
        0.5 * t4 - t3 + t,
        0.25 * t4 - (2.0 / 3.0) * t3 + 0.5 * t2,
        -0.5 * t4 + t3,
        0.25 * t4 - t3 / 3.0,
    )
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> Result<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    Ok((lo, hi))
}

/// Keeps the knots inside `[lo, hi]` plus one guard knot on each side. The
/// interpolant then depends only on the overlap-covering knots, making the
/// deltas exactly invariant to points appended beyond the guards.
fn clip_knots(xs: Vec<f64>, ys: Vec<f64>, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let start = match xs.iter().rposition(|&x| x <= lo) {
        Some(i) => i,
        None => 0,
    };
    let end = match xs.iter().position(|&x| x >= hi) {
        Some(i) => i,
        None => n - 1,
    };
    (xs[start..=end].to_vec(), ys[start..=end].to_vec())
}

fn clipped_pchip(xs: Vec<f64>, ys: Vec<f64>, lo: f64, hi: f64) -> Pchip {
    let (xs, ys) = clip_knots(xs, ys, lo, hi);
    Pchip::new(xs, ys)
}

/// Average rate difference in percent over the overlapping quality interval.
/// Negative values mean `test` spends less rate than `reference`.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    reference.validate()?;
    test.validate()?;
    let (lo, hi) = overlap(reference.quality_range(), test.quality_range())?;

    let ref_interp = clipped_pchip(
        reference.points.iter().map(|p| p.1).collect(),
        reference.points.iter().map(|p| p.0.log2()).collect(),
        lo,
        hi,
    );
    let test_interp = clipped_pchip(
        test.points.iter().map(|p| p.1).collect(),
        test.points.iter().map(|p| p.0.log2()).collect(),
        lo,
        hi,
    );

    let span = hi - lo;
    let avg_diff = (test_interp.integrate(lo, hi) - ref_interp.integrate(lo, hi)) / span;
    Ok((avg_diff.exp2() - 1.0) * 100.0)
}

/// Average quality difference over the overlapping log-rate interval.
/// Positive values mean `test` is better at equal rate.
pub fn bd_quality(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    reference.validate()?;
    test.validate()?;
    let (lo, hi) = overlap(reference.log_rate_range(), test.log_rate_range())?;

    let ref_interp = clipped_pchip(
        reference.points.iter().map(|p| p.0.log2()).collect(),
        reference.points.iter().map(|p| p.1).collect(),
        lo,
        hi,
    );
    let test_interp = clipped_pchip(
        test.points.iter().map(|p| p.0.log2()).collect(),
        test.points.iter().map(|p| p.1).collect(),
        lo,
        hi,
    );

    let span = hi - lo;
    Ok((test_interp.integrate(lo, hi) - ref_interp.integrate(lo, hi)) / span)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    pub(crate) fn sample_curve(label: &str) -> RdCurve {
        RdCurve::new(
            vec![(0.25, 30.0), (0.5, 33.5), (1.0, 36.2), (2.0, 38.4)],
            label,
        )
        .unwrap()
    }

    /// Fine-grid trapezoid integration of the same interpolant; the
    /// independent route for checking the closed-form segment integrals.
    pub(crate) fn bd_rate_trapezoid(reference: &RdCurve, test: &RdCurve, grid: usize) -> f64 {
        let (lo, hi) = overlap(
            reference.quality_range(),
            test.quality_range(),
        )
        .unwrap();
        let ref_interp = clipped_pchip(
            reference.points.iter().map(|p| p.1).collect(),
            reference.points.iter().map(|p| p.0.log2()).collect(),
            lo,
            hi,
        );
        let test_interp = clipped_pchip(
            test.points.iter().map(|p| p.1).collect(),
            test.points.iter().map(|p| p.0.log2()).collect(),
            lo,
            hi,
        );
        let mut acc = 0.0;
        let step = (hi - lo) / grid as f64;
        for i in 0..grid {
            let a = lo + i as f64 * step;
            let b = a + step;
            let fa = test_interp.eval(a) - ref_interp.eval(a);
            let fb = test_interp.eval(b) - ref_interp.eval(b);
            acc += 0.5 * (fa + fb) * step;
        }
        let avg = acc / (hi - lo);
        (avg.exp2() - 1.0) * 100.0
    }

    #[test]
    fn identical_curves_give_zero() {
        let c = sample_curve("a");
        assert_relative_eq!(bd_rate(&c, &c).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(bd_quality(&c, &c).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_rate_scaling_gives_exact_percent() {
        let reference = sample_curve("ref");
        let scaled = RdCurve::new(
            reference.points.iter().map(|&(b, q)| (0.9 * b, q)).collect(),
            "scaled",
        )
        .unwrap();
        let bd = bd_rate(&reference, &scaled).unwrap();
        assert!((bd + 10.0).abs() < 0.01, "expected -10%, got {bd}");
    }

    #[test]
    fn constant_quality_shift_recovered() {
        let reference = sample_curve("ref");
        let shifted = RdCurve::new(
            reference.points.iter().map(|&(b, q)| (b, q + 0.5)).collect(),
            "shifted",
        )
        .unwrap();
        let bd = bd_quality(&reference, &shifted).unwrap();
        assert!((bd - 0.5).abs() < 0.01, "expected +0.5 dB, got {bd}");
    }

    #[test]
    fn closed_form_matches_trapezoid_oracle() {
        let mut rng = crate::rng::stream(95, "bd", 0);
        for _ in 0..50 {
            let reference = random_monotone_curve(&mut rng, "ref");
            let test = random_monotone_curve(&mut rng, "test");
            if bd_rate(&reference, &test).is_err() {
                continue;
            }
            let exact = bd_rate(&reference, &test).unwrap();
            let approx = bd_rate_trapezoid(&reference, &test, 20_000);
            assert!(
                (exact - approx).abs() < 0.05,
                "closed form {exact} vs trapezoid {approx}"
            );
        }
    }

    pub(crate) fn random_monotone_curve(rng: &mut impl Rng, label: &str) -> RdCurve {
        let n = rng.random_range(4..8);
        let mut bpp = rng.random_range(0.05..0.4);
        let mut q = rng.random_range(28.0..31.0);
        let mut points = Vec::new();
        for _ in 0..n {
            points.push((bpp, q));
            bpp *= rng.random_range(1.3..2.2);
            q += rng.random_range(0.8..3.0);
        }
        RdCurve::new(points, label).unwrap()
    }

    #[test]
    fn sign_consistency_on_dominating_curves() {
        let mut rng = crate::rng::stream(96, "bd", 0);
        for _ in 0..20 {
            let reference = random_monotone_curve(&mut rng, "ref");
            // Strictly better: same qualities at 80% rate.
            let better = RdCurve::new(
                reference.points.iter().map(|&(b, q)| (0.8 * b, q)).collect(),
                "better",
            )
            .unwrap();
            let rate = bd_rate(&reference, &better).unwrap();
            let quality = bd_quality(&reference, &better).unwrap();
            assert!(rate < 0.0);
            assert!(quality > 0.0);
        }
    }

    #[test]
    fn antisymmetry_within_tolerance() {
        let mut rng = crate::rng::stream(97, "bd", 0);
        for _ in 0..20 {
            let a = random_monotone_curve(&mut rng, "a");
            let b = RdCurve::new(
                a.points.iter().map(|&(bpp, q)| (bpp * 0.93, q + 0.2)).collect(),
                "b",
            )
            .unwrap();
            let ab = bd_quality(&a, &b).unwrap();
            let ba = bd_quality(&b, &a).unwrap();
            assert!((ab + ba).abs() < 0.01, "ab {ab} ba {ba}");
        }
    }

    #[test]
    fn out_of_overlap_points_do_not_change_bd_rate() {
        // The reference pins the overlap to [31, 36]; the test curve already
        // has knots outside it on both sides.
        let reference = RdCurve::new(
            vec![(0.3, 31.0), (0.5, 33.0), (0.9, 34.8), (1.5, 36.0)],
            "ref",
        )
        .unwrap();
        let test = RdCurve::new(
            vec![(0.2, 29.0), (0.4, 32.0), (0.8, 34.5), (1.4, 36.5), (2.2, 38.0)],
            "test",
        )
        .unwrap();
        let base = bd_rate(&reference, &test).unwrap();

        // Appending points beyond the existing outside-overlap knots leaves
        // the overlap interval unchanged and must not move the result.
        let mut extended_points = vec![(0.05, 20.0), (0.1, 25.0)];
        extended_points.extend(test.points.iter().copied());
        extended_points.push((8.0, 45.0));
        let extended = RdCurve::new(extended_points, "extended").unwrap();
        let with_extra = bd_rate(&reference, &extended).unwrap();
        assert!(
            (base - with_extra).abs() < 1e-12,
            "base {base} vs extended {with_extra}"
        );
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = sample_curve("a");
        let b = RdCurve::new(
            vec![(0.1, 10.0), (0.2, 12.0), (0.4, 14.0), (0.8, 16.0)],
            "b",
        )
        .unwrap();
        assert!(matches!(bd_rate(&a, &b), Err(Error::NoOverlap)));
        // bd_quality overlaps on the rate axis; build disjoint bpp ranges.
        let c = RdCurve::new(
            vec![(8.0, 40.0), (10.0, 41.0), (14.0, 42.0), (20.0, 43.0)],
            "c",
        )
        .unwrap();
        assert!(matches!(bd_quality(&a, &c), Err(Error::NoOverlap)));
    }

    #[test]
    fn invalid_curves_rejected_with_diagnostics() {
        assert!(RdCurve::new(vec![(0.1, 30.0), (0.2, 31.0), (0.3, 32.0)], "short").is_err());
        assert!(RdCurve::new(
            vec![(0.1, 30.0), (0.2, 31.0), (0.2, 32.0), (0.4, 33.0)],
            "dup-bpp"
        )
        .is_err());
        assert!(RdCurve::new(
            vec![(0.1, 30.0), (0.2, 29.0), (0.3, 32.0), (0.4, 33.0)],
            "non-monotone"
        )
        .is_err());
    }
}
