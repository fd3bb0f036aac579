//! Interfaces for the auxiliary face-analysis models.
//!
//! Optimization-path providers ([`IdentityEmbedder`], [`AttributePredictor`])
//! must be differentiable with respect to the image and expose a
//! vector-Jacobian product. The face parser and the evaluation bundle are only
//! ever run forward.
//!
//! Providers are `Send + Sync` and may be shared for concurrent read-only
//! inference. An implementation that cannot tolerate that reports
//! [`exclusive`](IdentityEmbedder::exclusive) and the batch driver gives every
//! worker its own instance.

pub mod registry;
mod toy;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub use registry::{AdapterFactory, AdapterSettings, ProviderRegistry};
pub use toy::{
    toy_attribute_predictor, toy_eval_providers, toy_face_parser, toy_identity_embedder, ToyAttributePredictor,
    ToyEvalProviders, ToyFaceParser, ToyIdentityEmbedder,
};

/// Recognition embedding used by the identity loss.
pub trait IdentityEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>>;
    /// `(∂embed/∂image)ᵀ · grad`.
    fn embed_vjp(&self, image: &ImageTensor, grad: &[f64]) -> Result<Array3<f64>>;
    fn exclusive(&self) -> bool {
        false
    }
}

/// Per-attribute probabilities (40 CelebA attributes for real predictors).
pub trait AttributePredictor: Send + Sync {
    fn name(&self) -> &str;
    /// Raw probabilities, unclamped.
    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>>;
    fn predict_vjp(&self, image: &ImageTensor, grad: &[f64]) -> Result<Array3<f64>>;
    fn exclusive(&self) -> bool {
        false
    }
}

pub trait FaceParser: Send + Sync {
    fn name(&self) -> &str;
    fn parse(&self, image: &ImageTensor) -> Result<FaceMask>;
}

/// The forward-only models behind the evaluation metrics.
pub trait EvalProviders: Send + Sync {
    fn name(&self) -> &str;
    /// Recognition embedding for SID; a different model from the optimization embedder.
    fn recog_embed(&self, image: &ImageTensor) -> Result<Vec<f64>>;
    fn emotion(&self, image: &ImageTensor) -> Result<String>;
    fn gender(&self, image: &ImageTensor) -> Result<String>;
    /// `(pitch, yaw, roll)` in degrees.
    fn pose(&self, image: &ImageTensor) -> Result<[f64; 3]>;
    /// `(pitch, yaw)` in degrees.
    fn gaze(&self, image: &ImageTensor) -> Result<[f64; 2]>;
    /// Outcomes of the two face detectors.
    fn detect(&self, image: &ImageTensor) -> Result<[bool; 2]>;
}

/// Per-pixel face probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMask(Array2<f64>);

impl FaceMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn size(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Wraps a provider error with the provider's name.
pub(crate) fn provider_err(provider: &str, err: Error) -> Error {
    match err {
        Error::Provider { .. } => err,
        other => Error::Provider {
            provider: provider.to_string(),
            message: other.to_string(),
        },
    }
}

/// The three optimization-path providers.
#[derive(Clone, Copy)]
pub struct LossProviders<'a> {
    pub embedder: &'a dyn IdentityEmbedder,
    pub attributes: &'a dyn AttributePredictor,
    pub parser: &'a dyn FaceParser,
}
