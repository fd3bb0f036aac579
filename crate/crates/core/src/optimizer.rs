//! Direction optimization: invert once, then repeatedly decode, score and
//! take a plain gradient step on the shared edit direction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attributes::set_attribute_targets;
use crate::backend::Denoiser;
use crate::error::{Error, Result};
use crate::geometry::{EditDirection, EditMode, LatentTensor};
use crate::image::ImageTensor;
use crate::losses::{KlVariant, LossTerms, LossWeights, ReagentObjective, SourceCache};
use crate::providers::LossProviders;
use crate::rng::{normal_vec, seeded, streams};
use crate::sampler::{ddim_invert, BoostNoise, GradientMode, LatentState, Sampler};
use crate::schedule::{EditWindow, NoiseSchedule};
use crate::trajectory::{StepRecord, TrajectoryLog};

/// Norm of the replacement component when a tangent direction degenerates.
pub const DEGENERATE_RESET_NORM: f64 = 1e-4;
const MAX_DEGENERATE_RESETS: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    #[default]
    Linear,
    Tangent,
}

impl std::str::FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModeKind::Linear),
            "tangent" => Ok(ModeKind::Tangent),
            other => Err(Error::InvalidConfig(format!(
                "unknown edit mode '{other}'; use linear or tangent"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub mode: ModeKind,
    /// Edit strength; read in linear mode only.
    pub lambda: f64,
    /// Tangent mode: unit-normalize the projected direction.
    pub renormalize: bool,
    pub lr: f64,
    pub n_opt: usize,
    /// Norm of the initial direction.
    pub init_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub window: EditWindow,
    pub kl_variant: KlVariant,
    /// Attribute name to fixed target probability.
    pub attribute_targets: BTreeMap<String, f64>,
    /// Recompute reverse steps during backpropagation instead of storing them.
    pub checkpointing: bool,
    /// Keep the edited latent of every step for later projection.
    pub record_snapshots: bool,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            mode: ModeKind::Linear,
            lambda: 1000.0,
            renormalize: true,
            lr: 0.001,
            n_opt: 50,
            init_norm: 0.1,
            seed: crate::rng::DEFAULT_SEED,
            weights: LossWeights::default(),
            window: EditWindow::default(),
            kl_variant: KlVariant::Literal,
            attribute_targets: BTreeMap::new(),
            checkpointing: true,
            record_snapshots: false,
        }
    }
}

impl OptimizationConfig {
    pub fn edit_mode(&self) -> EditMode {
        match self.mode {
            ModeKind::Linear => EditMode::Linear { lambda: self.lambda },
            ModeKind::Tangent => EditMode::Tangent {
                renormalize: self.renormalize,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.n_opt == 0 {
            return Err(Error::InvalidConfig("need at least one optimization step".into()));
        }
        if !(self.init_norm.is_finite() && self.init_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial direction norm must be positive, got {}",
                self.init_norm
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "edit strength must be finite, got {}",
                self.lambda
            )));
        }
        self.weights.validate()
    }

    fn gradient_mode(&self) -> GradientMode {
        if self.checkpointing {
            GradientMode::checkpointed_for(self.window.n_denoise)
        } else {
            GradientMode::Stored
        }
    }
}

/// A standard-normal tensor rescaled to norm `m`.
pub fn initialize_direction(shape: &[usize], m: f64, seed: u64) -> Result<EditDirection> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "initial direction norm must be positive, got {m}"
        )));
    }
    let n = shape.iter().product();
    let mut rng = seeded(seed, streams::DIRECTION_INIT);
    let v = normal_vec(&mut rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    EditDirection::from_vec(shape, v.into_iter().map(|x| x * m / norm).collect())
}

/// Removes the component of `dh` along `z` and adds a random one of norm
/// [`DEGENERATE_RESET_NORM`].
fn rerandomize_parallel(dh: &EditDirection, z: &LatentTensor, seed: u64, attempt: usize) -> Result<EditDirection> {
    let zf = z.to_flat();
    let zn = z.norm();
    let mut d = dh.to_flat();
    if zn > 0.0 {
        let along = d.iter().zip(&zf).map(|(a, b)| a * b).sum::<f64>() / (zn * zn);
        d.iter_mut().zip(&zf).for_each(|(a, b)| *a -= along * b);
    }
    let mut rng = seeded(seed.wrapping_add(attempt as u64), streams::DEGENERATE_FIX);
    let r = normal_vec(&mut rng, d.len());
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.iter_mut()
        .zip(&r)
        .for_each(|(a, b)| *a += DEGENERATE_RESET_NORM * b / rn);
    EditDirection::from_vec(dh.shape(), d)
}

/// Output of [`optimize`].
#[derive(Debug, Clone)]
pub struct Deidentified {
    /// Decode of [`Deidentified::direction`].
    pub image: ImageTensor,
    pub direction: EditDirection,
    pub log: TrajectoryLog,
}

/// Everything computed once per source image.
pub struct Prepared<'a> {
    pub state: LatentState,
    pub sampler: Sampler<'a>,
    pub objective: ReagentObjective<'a>,
}

/// Inversion, boost noise and cached source quantities.
pub fn prepare<'a>(
    x: &ImageTensor,
    config: &OptimizationConfig,
    schedule: &'a NoiseSchedule,
    backend: &'a dyn Denoiser,
    providers: LossProviders<'a>,
) -> Result<Prepared<'a>> {
    config.validate()?;
    let state = ddim_invert(x, schedule, &config.window, backend)?;
    let noise = BoostNoise::draw(config.seed, &config.window, backend.image_shape());
    let sampler = Sampler::new(schedule, config.window, backend, noise)?;
    let source = SourceCache::compute(x, providers)?;
    let target = set_attribute_targets(&source.attributes, &config.attribute_targets)?;
    let objective = ReagentObjective::new(source, providers, config.weights)
        .with_target(target)
        .with_variant(config.kl_variant);
    Ok(Prepared {
        state,
        sampler,
        objective,
    })
}

fn step_failure(step: usize, last: Option<LossTerms>, err: Error) -> Error {
    let terms = last
        .map(|t| {
            format!(
                "; last terms total={} id={} attr={} mask={}",
                t.total, t.id, t.attr, t.mask
            )
        })
        .unwrap_or_default();
    match err {
        Error::NumericalFailure { context, step: t } => Error::NumericalFailure {
            context: format!("optimization step {step}: {context}{terms}"),
            step: t,
        },
        other => other,
    }
}

/// Runs `n_opt` iterations of decode, score and descend.
///
/// Iteration `k` evaluates the current direction; every iteration but the last
/// then steps it by `−lr·∇`. The returned image is the final iteration's decode
/// and the returned direction is the one that produced it, so `n_opt = 1`
/// yields the decode of the initial direction.
pub fn optimize(
    x: &ImageTensor,
    config: &OptimizationConfig,
    schedule: &NoiseSchedule,
    backend: &dyn Denoiser,
    providers: LossProviders<'_>,
) -> Result<Deidentified> {
    let prepared = prepare(x, config, schedule, backend, providers)?;
    optimize_prepared(&prepared, config)
}

pub fn optimize_prepared(prepared: &Prepared<'_>, config: &OptimizationConfig) -> Result<Deidentified> {
    let Prepared {
        state,
        sampler,
        objective,
    } = prepared;
    let mode = config.edit_mode();
    let grad_mode = config.gradient_mode();
    let mut dh = initialize_direction(state.latent().shape(), config.init_norm, config.seed)?;
    let mut log = TrajectoryLog::default();
    let mut last_terms = None;
    let mut resets = 0;

    for step in 0..config.n_opt {
        let is_last = step + 1 == config.n_opt;
        let attempt = if is_last {
            sampler.decode(state, &dh, mode).map(|img| (img, None))
        } else {
            sampler
                .gradient(state, &dh, mode, objective, grad_mode)
                .map(|g| (g.image, Some(g.grad)))
        };
        let (image, grad) = match attempt {
            Err(Error::DegenerateDirection { tangent_norm }) if resets < MAX_DEGENERATE_RESETS => {
                resets += 1;
                dh = rerandomize_parallel(&dh, state.latent(), config.seed, resets)?;
                log.events.push(format!(
                    "step {step}: direction parallel to the latent (tangent norm {tangent_norm:e}); \
                     parallel component re-randomized at norm {DEGENERATE_RESET_NORM:e}"
                ));
                // Redo this step with the repaired direction.
                let retry = if is_last {
                    sampler.decode(state, &dh, mode).map(|img| (img, None))
                } else {
                    sampler
                        .gradient(state, &dh, mode, objective, grad_mode)
                        .map(|g| (g.image, Some(g.grad)))
                };
                retry.map_err(|e| step_failure(step, last_terms, e))?
            }
            other => other.map_err(|e| step_failure(step, last_terms, e))?,
        };

        let terms = objective.terms(&image).map_err(|e| step_failure(step, last_terms, e))?;
        if !terms.total.is_finite() {
            return Err(step_failure(
                step,
                Some(terms),
                Error::numerical("non-finite loss", None),
            ));
        }
        let snapshot = if config.record_snapshots {
            Some(mode.apply(state.latent(), &dh)?.to_flat())
        } else {
            None
        };
        log.records.push(StepRecord::new(step, terms, dh.norm(), snapshot));
        last_terms = Some(terms);

        match grad {
            Some(g) => {
                let next = dh.data() - &(g * config.lr);
                dh = EditDirection::new(next).map_err(|e| step_failure(step, last_terms, e))?;
            }
            None => {
                return Ok(Deidentified {
                    image,
                    direction: dh,
                    log,
                })
            }
        }
    }
    unreachable!("the last iteration returns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyDenoiser, ToyDenoiserConfig};
    use crate::image::synthetic_face;
    use crate::providers::{toy_attribute_predictor, toy_face_parser, toy_identity_embedder};

    #[test]
    fn initial_direction_has_requested_norm() {
        let a = initialize_direction(&[8, 2, 2], 0.1, 1006).unwrap();
        assert!((a.norm() - 0.1).abs() < 1e-9);
        assert_eq!(a, initialize_direction(&[8, 2, 2], 0.1, 1006).unwrap());
        assert_ne!(a, initialize_direction(&[8, 2, 2], 0.1, 1007).unwrap());
        assert!(initialize_direction(&[3], 0.0, 1).is_err());
    }

    #[test]
    fn rerandomized_direction_leaves_the_parallel_line() {
        let z = LatentTensor::from_vec(&[3], vec![1.0, 2.0, 2.0]).unwrap();
        let dh = EditDirection::from_vec(&[3], vec![2.0, 4.0, 4.0]).unwrap();
        let fixed = rerandomize_parallel(&dh, &z, 1006, 1).unwrap();
        assert!((fixed.norm() - DEGENERATE_RESET_NORM).abs() < 1e-12);
        assert!(crate::geometry::tangent_project(&z, &fixed).is_ok());
    }

    #[test]
    fn single_iteration_decodes_the_initial_direction() {
        let schedule = NoiseSchedule::default();
        let backend = ToyDenoiser::new(16, 16, schedule.alphas_cumprod(), ToyDenoiserConfig::default()).unwrap();
        let (e, a, p) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
        let providers = LossProviders {
            embedder: &e,
            attributes: &a,
            parser: &p,
        };
        let config = OptimizationConfig {
            n_opt: 1,
            window: EditWindow::with_steps(8),
            ..OptimizationConfig::default()
        };
        let x = synthetic_face(16, 16, 0);
        let out = optimize(&x, &config, &schedule, &backend, providers).unwrap();
        assert_eq!(out.log.len(), 1);
        let prepared = prepare(&x, &config, &schedule, &backend, providers).unwrap();
        let init = initialize_direction(&backend.latent_shape(), 0.1, config.seed).unwrap();
        assert_eq!(out.direction, init);
        let decoded = prepared
            .sampler
            .decode(&prepared.state, &init, config.edit_mode())
            .unwrap();
        assert_eq!(out.image, decoded);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            OptimizationConfig {
                lr: 0.0,
                ..Default::default()
            },
            OptimizationConfig {
                n_opt: 0,
                ..Default::default()
            },
            OptimizationConfig {
                init_norm: -1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert_eq!("Tangent".parse::<ModeKind>().unwrap(), ModeKind::Tangent);
        assert!("sideways".parse::<ModeKind>().is_err());
    }
}
