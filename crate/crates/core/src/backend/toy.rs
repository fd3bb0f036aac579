//! Analytic stand-in for a pretrained U-Net.
//!
//! Pixel space is split by two orthonormal bases: `P` (what the network "reads"
//! into its bottleneck) and `U` (what its noise prediction "writes"), with
//! `Pᵀ U = 0`. With `y = x_t / √ᾱ_t`:
//!
//! ```text
//! h = s · Pᵀ y
//! ε = c · U G tanh(h / s) + k · U K Pᵀ y
//! ```
//!
//! Moving `y` along `U` leaves `Pᵀ y`, and therefore `ε`, unchanged, so the
//! deterministic DDIM recursion inverts exactly. Injecting `h̃ ≠ h` shifts the
//! `x₀` prediction inside the face-windowed span of `U`.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};

use super::{Denoiser, Prediction};
use crate::error::{Error, Result};
use crate::geometry::LatentTensor;
use crate::image::soft_ellipse;
use crate::rng::{normal_vec, seeded, streams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDenoiserConfig {
    pub seed: u64,
    /// Bottleneck shape is `[latent_channels, 2, 2]`.
    pub latent_channels: usize,
    /// Number of pixel-space directions the prediction can write to.
    pub effect_rank: usize,
    /// Scale `s` of the bottleneck activation.
    pub latent_scale: f64,
    /// Gain `c` of the bottleneck-driven term.
    pub effect_gain: f64,
    /// Gain `k` of the skip term.
    pub skip_gain: f64,
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            seed: crate::rng::DEFAULT_SEED,
            latent_channels: 8,
            effect_rank: 16,
            latent_scale: 100.0,
            effect_gain: 0.05,
            skip_gain: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    config: ToyDenoiserConfig,
    shape: [usize; 3],
    latent_shape: Vec<usize>,
    read: Array2<f64>,
    write: Array2<f64>,
    mix: Array2<f64>,
    skip: Array2<f64>,
    alphas_cumprod: Vec<f64>,
}

/// Modified Gram–Schmidt on the columns of `m`, in place.
fn orthonormalize(m: &mut Array2<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let proj = m.column(i).dot(&m.column(j));
            let prev = m.column(i).to_owned();
            m.column_mut(j).scaled_add(-proj, &prev);
        }
        let n = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / n);
    }
}

impl ToyDenoiser {
    /// Builds a toy backend for `height×width` images against `alphas_cumprod`.
    pub fn new(height: usize, width: usize, alphas_cumprod: &[f64], config: ToyDenoiserConfig) -> Result<Self> {
        let n = height * width * 3;
        let latent_dim = config.latent_channels * 4;
        if config.latent_channels == 0 || config.effect_rank == 0 || n < latent_dim + config.effect_rank {
            return Err(Error::InvalidConfig(format!(
                "toy backend cannot fit {} latent and {} effect directions into {height}x{width} images",
                latent_dim, config.effect_rank
            )));
        }
        let mut rng = seeded(config.seed, streams::TOY_BACKEND);
        let window = soft_ellipse(height, width);
        let k = config.effect_rank;
        let mut basis = Array2::<f64>::zeros((n, k + latent_dim));
        for (col, mut column) in basis.axis_iter_mut(Axis(1)).enumerate() {
            let noise = normal_vec(&mut rng, n);
            for (idx, v) in column.iter_mut().enumerate() {
                let w = if col < k {
                    window[[idx / (width * 3), (idx / 3) % width]]
                } else {
                    1.0
                };
                *v = w * noise[idx];
            }
        }
        orthonormalize(&mut basis);
        let write = basis.slice(ndarray::s![.., ..k]).to_owned();
        let read = basis.slice(ndarray::s![.., k..]).to_owned();
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let mix = Array2::from_shape_vec((k, latent_dim), normal_vec(&mut rng, k * latent_dim)).expect("shape") * scale;
        let skip =
            Array2::from_shape_vec((k, latent_dim), normal_vec(&mut rng, k * latent_dim)).expect("shape") * scale;
        Ok(Self {
            config,
            shape: [height, width, 3],
            latent_shape: vec![config.latent_channels, 2, 2],
            read,
            write,
            mix,
            skip,
            alphas_cumprod: alphas_cumprod.to_vec(),
        })
    }

    /// A backend whose noise prediction is identically zero.
    pub fn zero(height: usize, width: usize, alphas_cumprod: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            alphas_cumprod,
            ToyDenoiserConfig {
                effect_gain: 0.0,
                skip_gain: 0.0,
                ..ToyDenoiserConfig::default()
            },
        )
    }

    pub fn config(&self) -> &ToyDenoiserConfig {
        &self.config
    }

    fn check_image(&self, x: &Array3<f64>) -> Result<()> {
        if x.shape() == self.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                context: "toy denoiser input",
                expected: self.shape.to_vec(),
                actual: x.shape().to_vec(),
            })
        }
    }

    fn check_latent(&self, h: &[usize]) -> Result<()> {
        if h == self.latent_shape.as_slice() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                context: "toy denoiser latent",
                expected: self.latent_shape.clone(),
                actual: h.to_vec(),
            })
        }
    }

    fn sqrt_alpha(&self, t: usize) -> Result<f64> {
        self.alphas_cumprod
            .get(t)
            .map(|a| a.sqrt())
            .ok_or_else(|| Error::InvalidConfig(format!("timestep {t} outside the toy backend's schedule")))
    }

    fn flat(x: &Array3<f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().copied())
    }

    fn unflat(&self, v: Array1<f64>) -> Array3<f64> {
        Array3::from_shape_vec((self.shape[0], self.shape[1], 3), v.to_vec()).expect("image shape")
    }

    /// `Pᵀ y`.
    fn read_coords(&self, x: &Array3<f64>, t: usize) -> Result<Array1<f64>> {
        let y = Self::flat(x) / self.sqrt_alpha(t)?;
        Ok(self.read.t().dot(&y))
    }

    fn eps_from(&self, h: &Array1<f64>, coords: &Array1<f64>) -> Array3<f64> {
        let s = self.config.latent_scale;
        let written = self.mix.dot(&h.mapv(|v| (v / s).tanh())) * self.config.effect_gain
            + self.skip.dot(coords) * self.config.skip_gain;
        self.unflat(self.write.dot(&written))
    }

    /// Gradient of `⟨grad_eps, ε⟩` with respect to `h` (tanh branch) and to `Pᵀy` (skip branch).
    fn eps_backward(&self, h: &Array1<f64>, grad_eps: &Array3<f64>) -> (Array1<f64>, Array1<f64>) {
        let s = self.config.latent_scale;
        let w = self.write.t().dot(&Self::flat(grad_eps));
        let through_mix = self.mix.t().dot(&w) * self.config.effect_gain;
        let grad_h = Array1::from_iter(
            through_mix
                .iter()
                .zip(h.iter())
                .map(|(g, hv)| g * (1.0 - (hv / s).tanh().powi(2)) / s),
        );
        let grad_coords = self.skip.t().dot(&w) * self.config.skip_gain;
        (grad_h, grad_coords)
    }

    fn latent_flat(h: &LatentTensor) -> Array1<f64> {
        Array1::from_iter(h.data().iter().copied())
    }
}

impl Denoiser for ToyDenoiser {
    fn name(&self) -> &str {
        "toy"
    }

    fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn latent_shape(&self) -> Vec<usize> {
        self.latent_shape.clone()
    }

    fn predict(&self, x: &Array3<f64>, t: usize) -> Result<Prediction> {
        self.check_image(x)?;
        let coords = self.read_coords(x, t)?;
        let h = &coords * self.config.latent_scale;
        let eps = self.eps_from(&h, &coords);
        let h =
            LatentTensor::new(ArrayD::from_shape_vec(IxDyn(&self.latent_shape), h.to_vec()).expect("latent shape"))?;
        Ok(Prediction { eps, h })
    }

    fn predict_injected(&self, x: &Array3<f64>, t: usize, h: &LatentTensor) -> Result<Array3<f64>> {
        self.check_image(x)?;
        self.check_latent(h.shape())?;
        let coords = self.read_coords(x, t)?;
        Ok(self.eps_from(&Self::latent_flat(h), &coords))
    }

    fn predict_vjp(
        &self,
        x: &Array3<f64>,
        t: usize,
        grad_eps: &Array3<f64>,
        grad_h: Option<&ArrayD<f64>>,
    ) -> Result<Array3<f64>> {
        self.check_image(x)?;
        let coords = self.read_coords(x, t)?;
        let h = &coords * self.config.latent_scale;
        let (mut g_h, g_coords) = self.eps_backward(&h, grad_eps);
        if let Some(extra) = grad_h {
            self.check_latent(extra.shape())?;
            g_h += &Array1::from_iter(extra.iter().copied());
        }
        let g_coords = g_h * self.config.latent_scale + g_coords;
        let g_y = self.read.dot(&g_coords);
        Ok(self.unflat(g_y / self.sqrt_alpha(t)?))
    }

    fn predict_injected_vjp(
        &self,
        x: &Array3<f64>,
        t: usize,
        h: &LatentTensor,
        grad_eps: &Array3<f64>,
    ) -> Result<(Array3<f64>, ArrayD<f64>)> {
        self.check_image(x)?;
        self.check_latent(h.shape())?;
        let (g_h, g_coords) = self.eps_backward(&Self::latent_flat(h), grad_eps);
        let g_x = self.unflat(self.read.dot(&g_coords) / self.sqrt_alpha(t)?);
        let g_h = ArrayD::from_shape_vec(IxDyn(&self.latent_shape), g_h.to_vec()).expect("latent shape");
        Ok((g_x, g_h))
    }
}
