//! Learned image compression with channel-wise latent decorrelation.
//!
//! The crate implements a transform-coding pipeline (analysis/synthesis
//! transforms with a scale hyperprior), a rate-distortion training loop whose
//! objective carries an optional channel-decorrelation regularizer, a range
//! coder that turns quantized latents into real bitstreams, and the metric
//! stack (PSNR, MS-SSIM, Bjøntegaard deltas) used to compare trained models.
//!
//! Heavy inner loops are data-parallel via rayon when the default `parallel`
//! feature is enabled; the sequential fallback produces bit-identical results,
//! and `benches/kernels.rs` compares the two paths.

pub mod checkpoint;
pub mod codec;
pub mod coding;
pub mod decorrelation;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

mod par;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, LatentTensor};

/// Low-level kernel entry points for the bench suite: each pair runs the
/// same computation with and without rayon and returns identical bits.
#[doc(hidden)]
pub mod kernels {
    pub use crate::codec::nn::{
        conv2d_forward, conv2d_forward_seq, tconv2d_forward, tconv2d_forward_seq, Conv2d,
        ConvShape, ConvTranspose2d, PadMode, TConvShape,
    };
    pub use crate::decorrelation::{loss_and_gradient, loss_and_gradient_seq};
}
