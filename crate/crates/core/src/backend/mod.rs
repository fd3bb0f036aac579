//! Pluggable denoiser interface.
//!
//! # Adapter contract
//!
//! A backend wraps a pretrained noise predictor `ε_θ(x_t, t)` whose
//! bottleneck (mid-block output) is exposed as the h-space latent. To plug in a
//! real checkpoint, implement [`Denoiser`] so that:
//!
//! * [`Denoiser::predict`] returns the unconditional noise prediction together
//!   with the bottleneck activation it computed on the way;
//! * [`Denoiser::predict_injected`] reruns the network with the bottleneck
//!   replaced by the supplied tensor (the decoder half sees `h̃`, skip
//!   connections still come from `x_t`);
//! * the two `*_vjp` methods return vector-Jacobian products of those maps,
//!   typically by calling the host framework's autograd;
//! * every method is deterministic and the latent shape is the same at every
//!   timestep.
//!
//! Checkpoint loading is the adapter's business; adapters are registered by
//! name in [`crate::providers::registry`].

mod toy;

use ndarray::{Array3, ArrayD};

use crate::error::Result;
use crate::geometry::LatentTensor;

pub use toy::{ToyDenoiser, ToyDenoiserConfig};

/// Output of an unconditional forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub eps: Array3<f64>,
    pub h: LatentTensor,
}

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// `[H, W, 3]` of the images this backend accepts.
    fn image_shape(&self) -> [usize; 3];

    /// Shape of the bottleneck activation.
    fn latent_shape(&self) -> Vec<usize>;

    fn predict(&self, x: &Array3<f64>, t: usize) -> Result<Prediction>;

    /// Noise prediction with the bottleneck replaced by `h`.
    fn predict_injected(&self, x: &Array3<f64>, t: usize, h: &LatentTensor) -> Result<Array3<f64>>;

    /// `(∂ε/∂x)ᵀ·grad_eps + (∂h/∂x)ᵀ·grad_h` for [`Denoiser::predict`].
    fn predict_vjp(
        &self,
        x: &Array3<f64>,
        t: usize,
        grad_eps: &Array3<f64>,
        grad_h: Option<&ArrayD<f64>>,
    ) -> Result<Array3<f64>>;

    /// Gradients of `⟨grad_eps, predict_injected(x, t, h)⟩` with respect to `x` and `h`.
    fn predict_injected_vjp(
        &self,
        x: &Array3<f64>,
        t: usize,
        h: &LatentTensor,
        grad_eps: &Array3<f64>,
    ) -> Result<(Array3<f64>, ArrayD<f64>)>;
}
