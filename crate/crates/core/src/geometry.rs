//! Linear and tangent (geodesic) edits of h-space latents.
//!
//! Every norm and inner product is taken over the flattened tensor, so a
//! `C×H×W` bottleneck activation is handled as one vector of length `C·H·W`.
//! The backward passes (`*_vjp`) return vector-Jacobian products and are what
//! the sampler chains together when differentiating the whole reverse process.

use std::f64::consts::PI;

use ndarray::{ArrayD, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Projection norms below this are treated as "edit parallel to latent".
pub const PARALLEL_THRESHOLD: f64 = 1e-8;

/// An h-space activation (the U-Net bottleneck output) of arbitrary shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor(ArrayD<f64>);

/// A trainable direction living in the same space as a [`LatentTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct EditDirection(ArrayD<f64>);

macro_rules! tensor_newtype {
    ($name:ident) => {
        impl $name {
            /// Wraps `data`, rejecting non-finite entries.
            pub fn new(data: ArrayD<f64>) -> Result<Self> {
                if data.iter().all(|v| v.is_finite()) {
                    Ok(Self(data))
                } else {
                    Err(Error::numerical(
                        concat!("non-finite entry in ", stringify!($name)),
                        None,
                    ))
                }
            }

            pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self> {
                let len = values.len();
                let data = ArrayD::from_shape_vec(IxDyn(shape), values).map_err(|_| Error::ShapeMismatch {
                    context: stringify!($name),
                    expected: shape.to_vec(),
                    actual: vec![len],
                })?;
                Self::new(data)
            }

            pub fn zeros(shape: &[usize]) -> Self {
                Self(ArrayD::zeros(IxDyn(shape)))
            }

            pub fn shape(&self) -> &[usize] {
                self.0.shape()
            }

            /// Flattened dimensionality `d`.
            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn data(&self) -> &ArrayD<f64> {
                &self.0
            }

            pub fn into_inner(self) -> ArrayD<f64> {
                self.0
            }

            /// Row-major flattened copy.
            pub fn to_flat(&self) -> Vec<f64> {
                self.0.iter().copied().collect()
            }

            pub fn norm(&self) -> f64 {
                norm(&self.0)
            }
        }
    };
}

tensor_newtype!(LatentTensor);
tensor_newtype!(EditDirection);

pub(crate) fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

pub(crate) fn norm(a: &ArrayD<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_shapes(context: &'static str, z: &ArrayD<f64>, dh: &ArrayD<f64>) -> Result<()> {
    if z.shape() == dh.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected: z.shape().to_vec(),
            actual: dh.shape().to_vec(),
        })
    }
}

/// `ẑ = z + λ·Δh`.
pub fn linear_edit(z: &LatentTensor, dh: &EditDirection, lambda: f64) -> Result<LatentTensor> {
    check_shapes("linear_edit", &z.0, &dh.0)?;
    Ok(LatentTensor(&z.0 + &(&dh.0 * lambda)))
}

/// Intermediate quantities of the tangent construction, kept for the backward pass.
struct TangentParts {
    z_norm: f64,
    z_unit: ArrayD<f64>,
    dh_norm: f64,
    dh_unit: ArrayD<f64>,
    cos_angle: f64,
    proj: ArrayD<f64>,
    proj_norm: f64,
}

fn tangent_parts(z: &ArrayD<f64>, dh: &ArrayD<f64>) -> Result<TangentParts> {
    check_shapes("tangent_project", z, dh)?;
    let z_norm = norm(z);
    if z_norm == 0.0 {
        return Err(Error::DegenerateInput("latent has zero norm"));
    }
    let dh_norm = norm(dh);
    if dh_norm == 0.0 {
        return Err(Error::DegenerateInput("edit direction has zero norm"));
    }
    let z_unit = z / z_norm;
    let dh_unit = dh / dh_norm;
    let cos_angle = dot(&dh_unit, &z_unit);
    let proj = &dh_unit - &(&z_unit * cos_angle);
    let proj_norm = norm(&proj);
    if proj_norm < PARALLEL_THRESHOLD {
        return Err(Error::DegenerateDirection {
            tangent_norm: proj_norm,
        });
    }
    Ok(TangentParts {
        z_norm,
        z_unit,
        dh_norm,
        dh_unit,
        cos_angle,
        proj,
        proj_norm,
    })
}

/// Projects the unit edit direction onto the tangent plane of the sphere of
/// radius `‖z‖` at `z`. The result is not renormalized.
pub fn tangent_project(z: &LatentTensor, dh: &EditDirection) -> Result<EditDirection> {
    let parts = tangent_parts(&z.0, &dh.0)?;
    Ok(EditDirection(parts.proj))
}

/// Rotation angle used by the tangent edit: `‖Δh‖` radians, clamped to `π`.
pub fn tangent_angle(dh: &EditDirection) -> f64 {
    dh.norm().min(PI)
}

/// Moves `z` along the great circle through `z` in the tangent direction of
/// `dh` by `θ = min(‖dh‖, π)` radians.
///
/// With `renormalize` the tangent direction is scaled to unit length, so the
/// result keeps `‖z‖` exactly. Without it the raw projection is used and the
/// norm can shrink.
pub fn tangent_edit(z: &LatentTensor, dh: &EditDirection, renormalize: bool) -> Result<LatentTensor> {
    let parts = tangent_parts(&z.0, &dh.0)?;
    let theta = parts.dh_norm.min(PI);
    let dir_scale = if renormalize { 1.0 / parts.proj_norm } else { 1.0 };
    let (sin, cos) = theta.sin_cos();
    let mut out = &parts.z_unit * (parts.z_norm * cos);
    out.scaled_add(parts.z_norm * sin * dir_scale, &parts.proj);
    Ok(LatentTensor(out))
}

/// Backward pass of [`tangent_edit`]: given `∂L/∂ẑ`, returns `(∂L/∂z, ∂L/∂dh)`.
fn tangent_edit_vjp(
    z: &ArrayD<f64>,
    dh: &ArrayD<f64>,
    renormalize: bool,
    grad_out: &ArrayD<f64>,
) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
    let p = tangent_parts(z, dh)?;
    let theta = p.dh_norm.min(PI);
    let (sin, cos) = theta.sin_cos();
    let dir = if renormalize {
        &p.proj / p.proj_norm
    } else {
        p.proj.clone()
    };

    // ẑ = r (cosθ u + sinθ w)
    let grad_r = cos * dot(grad_out, &p.z_unit) + sin * dot(grad_out, &dir);
    let mut grad_u = grad_out * (p.z_norm * cos);
    let grad_w = grad_out * (p.z_norm * sin);
    let grad_theta = p.z_norm * (-sin * dot(grad_out, &p.z_unit) + cos * dot(grad_out, &dir));

    // w = p/‖p‖ (or w = p)
    let grad_p = if renormalize {
        let along = dot(&grad_w, &dir);
        (&grad_w - &(&dir * along)) / p.proj_norm
    } else {
        grad_w
    };

    // p = v − c·u, c = ⟨v, u⟩
    let grad_c = -dot(&grad_p, &p.z_unit);
    let mut grad_v = grad_p.clone();
    grad_v.scaled_add(grad_c, &p.z_unit);
    grad_u.scaled_add(-p.cos_angle, &grad_p);
    grad_u.scaled_add(grad_c, &p.dh_unit);

    // v = dh/‖dh‖, θ = min(‖dh‖, π)
    let along_v = dot(&grad_v, &p.dh_unit);
    let mut grad_dh = (&grad_v - &(&p.dh_unit * along_v)) / p.dh_norm;
    if p.dh_norm < PI {
        grad_dh.scaled_add(grad_theta, &p.dh_unit);
    }

    // u = z/‖z‖, r = ‖z‖
    let along_u = dot(&grad_u, &p.z_unit);
    let mut grad_z = (&grad_u - &(&p.z_unit * along_u)) / p.z_norm;
    grad_z.scaled_add(grad_r, &p.z_unit);

    Ok((grad_z, grad_dh))
}

/// How a shared direction is applied to each visited latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EditMode {
    Linear { lambda: f64 },
    Tangent { renormalize: bool },
}

impl EditMode {
    pub fn apply(&self, z: &LatentTensor, dh: &EditDirection) -> Result<LatentTensor> {
        match *self {
            EditMode::Linear { lambda } => linear_edit(z, dh, lambda),
            EditMode::Tangent { renormalize } => tangent_edit(z, dh, renormalize),
        }
    }

    /// Vector-Jacobian product of [`EditMode::apply`] with respect to both inputs.
    pub fn vjp(
        &self,
        z: &LatentTensor,
        dh: &EditDirection,
        grad_out: &ArrayD<f64>,
    ) -> Result<(ArrayD<f64>, ArrayD<f64>)> {
        check_shapes("edit backward", &z.0, grad_out)?;
        match *self {
            EditMode::Linear { lambda } => {
                check_shapes("linear_edit", &z.0, &dh.0)?;
                Ok((grad_out.clone(), grad_out * lambda))
            }
            EditMode::Tangent { renormalize } => tangent_edit_vjp(&z.0, &dh.0, renormalize, grad_out),
        }
    }

    pub fn is_tangent(&self) -> bool {
        matches!(self, EditMode::Tangent { .. })
    }
}
