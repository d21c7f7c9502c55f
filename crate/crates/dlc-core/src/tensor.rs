//! Dense 4-D tensors used throughout the pipeline.
//!
//! Both tensor kinds share the `(batch, channels, height, width)` layout.
//! Validation is explicit: constructors reject empty axes and non-finite
//! entries so downstream numeric code can assume clean inputs.

use ndarray::{Array4, ArrayView4};

use crate::error::{Error, Result};

/// A latent feature tensor of shape `(N, C, H, W)`.
///
/// Holds the analysis output `y`, the hyper-latent `z`, and their quantized
/// or noise-perturbed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Array4<f64>,
}

impl LatentTensor {
    /// Validates shape and finiteness.
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidTensor(format!(
                "all axes must be nonempty, got ({n}, {c}, {h}, {w})"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent tensor".into()));
        }
        Ok(Self { data })
    }

    /// Wraps without the finiteness scan. For internal pipeline stages whose
    /// inputs were already validated.
    pub(crate) fn from_validated(data: Array4<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn view(&self) -> ArrayView4<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array4<f64> {
        self.data
    }
}

/// An image batch of shape `(N, 3, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array4<f64>,
}

impl ImageTensor {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (n, c, h, w) = data.dim();
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidTensor(format!(
                "all axes must be nonempty, got ({n}, {c}, {h}, {w})"
            )));
        }
        if c != 3 {
            return Err(Error::InvalidTensor(format!(
                "images carry 3 channels, got {c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image tensor".into()));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTensor(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_validated(data: Array4<f64>) -> Self {
        Self { data }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn pixels(&self) -> usize {
        let (n, _, h, w) = self.data.dim();
        n * h * w
    }

    pub fn view(&self) -> ArrayView4<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array4<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn rejects_empty_axis() {
        let arr = Array4::<f64>::zeros((0, 2, 2, 2));
        assert!(LatentTensor::new(arr).is_err());
    }

    #[test]
    fn rejects_nan() {
        let mut arr = Array4::<f64>::zeros((1, 2, 2, 2));
        arr[[0, 0, 0, 0]] = f64::NAN;
        assert!(LatentTensor::new(arr).is_err());
    }

    #[test]
    fn image_range_enforced() {
        let mut arr = Array4::<f64>::zeros((1, 3, 2, 2));
        arr[[0, 0, 0, 0]] = 1.5;
        assert!(ImageTensor::new(arr).is_err());
    }

    #[test]
    fn accepts_valid() {
        let arr = Array4::<f64>::from_elem((2, 3, 4, 4), 0.25);
        let t = ImageTensor::new(arr).unwrap();
        assert_eq!(t.dim(), (2, 3, 4, 4));
        assert_eq!(t.pixels(), 32);
    }
}
