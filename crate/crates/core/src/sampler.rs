//! DDIM inversion, the asymmetric guided reverse process, and its reverse-mode
//! derivative with optional gradient checkpointing.

use ndarray::{Array3, ArrayD};

use crate::backend::{Denoiser, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{EditDirection, EditMode, LatentTensor};
use crate::image::ImageTensor;
use crate::rng::{normal_vec, seeded, streams};
use crate::schedule::{EditWindow, NoiseSchedule, Phase};

/// Result of inverting an image to depth `t0`.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// Noised image at `t0`.
    pub x_t: Array3<f64>,
    /// Bottleneck activations recorded at each visited timestep, increasing `t`.
    pub h_list: Vec<(usize, LatentTensor)>,
}

impl LatentState {
    /// The h-space code of the image: the bottleneck activation at `t0`.
    pub fn latent(&self) -> &LatentTensor {
        &self.h_list.last().expect("inversion records at least one latent").1
    }
}

fn ensure_finite(x: &Array3<f64>, context: &str, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(context.to_string(), Some(t)))
    }
}

/// `x_next = √ᾱ_next·P_t(ε) + √(1 − ᾱ_next)·ε` with `P_t(ε) = (x − √(1−ᾱ)ε)/√ᾱ`.
fn ddim_move(x: &Array3<f64>, eps: &Array3<f64>, a_from: f64, a_to: f64) -> Array3<f64> {
    let x0 = (x - &(eps * (1.0 - a_from).sqrt())) / a_from.sqrt();
    x0 * a_to.sqrt() + eps * (1.0 - a_to).sqrt()
}

/// Deterministic DDIM inversion (`η = 0`) from the clean image to `t0`.
///
/// The first move, from the clean image to the smallest visited timestep, has
/// no timestep of its own; its noise prediction is taken at that timestep on
/// the noise-free scaled image `√ᾱ·x`.
pub fn ddim_invert(
    x: &ImageTensor,
    schedule: &NoiseSchedule,
    window: &EditWindow,
    backend: &dyn Denoiser,
) -> Result<LatentState> {
    window.validate(schedule)?;
    if x.shape() != backend.image_shape() {
        return Err(Error::ShapeMismatch {
            context: "inversion input",
            expected: backend.image_shape().to_vec(),
            actual: x.shape().to_vec(),
        });
    }
    let ts = window.timesteps();
    let a0 = schedule.alpha_bar(Some(ts[0]));
    let start = x.data() * a0.sqrt();
    let eps = backend.predict(&start, ts[0])?.eps;
    let mut cur = ddim_move(x.data(), &eps, 1.0, a0);
    ensure_finite(&cur, "inversion", ts[0])?;

    let mut h_list = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let Prediction { eps, h } = backend.predict(&cur, t)?;
        h_list.push((t, h));
        if let Some(&t_next) = ts.get(i + 1) {
            cur = ddim_move(
                &cur,
                &eps,
                schedule.alpha_bar(Some(t)),
                schedule.alpha_bar(Some(t_next)),
            );
            ensure_finite(&cur, "inversion", t_next)?;
        }
    }
    Ok(LatentState { x_t: cur, h_list })
}

/// DDIM posterior noise scale for `η`.
pub fn sigma(eta: f64, a_t: f64, a_prev: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
}

/// Frozen per-image noise for the stochastic reverse steps.
#[derive(Debug, Clone)]
pub struct BoostNoise(Vec<Option<Array3<f64>>>);

impl BoostNoise {
    /// Draws one standard-normal tensor for each reverse step with `η > 0`.
    pub fn draw(seed: u64, window: &EditWindow, shape: [usize; 3]) -> Self {
        let mut rng = seeded(seed, streams::BOOST_NOISE);
        let n = shape.iter().product();
        let steps = window
            .reverse_steps()
            .into_iter()
            .map(|(t, _)| {
                (window.eta(window.phase(t)) > 0.0).then(|| {
                    Array3::from_shape_vec((shape[0], shape[1], shape[2]), normal_vec(&mut rng, n))
                        .expect("noise shape")
                })
            })
            .collect();
        Self(steps)
    }

    pub fn none(window: &EditWindow) -> Self {
        Self(vec![None; window.n_denoise])
    }

    pub fn get(&self, step: usize) -> Option<&Array3<f64>> {
        self.0.get(step).and_then(Option::as_ref)
    }
}

/// Edit applied at a guided step: the shared direction and how to apply it.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub mode: EditMode,
    pub direction: &'a EditDirection,
}

/// Intermediates of one reverse step, kept for the backward pass.
struct StepCache {
    x_t: Array3<f64>,
    h: LatentTensor,
    h_edit: Option<LatentTensor>,
}

struct StepCoefs {
    sqrt_a_t: f64,
    sqrt_one_minus_a_t: f64,
    sqrt_a_prev: f64,
    dir_coef: f64,
    sigma: f64,
}

fn coefs(schedule: &NoiseSchedule, t: usize, t_prev: Option<usize>, eta: f64) -> StepCoefs {
    let a_t = schedule.alpha_bar(Some(t));
    let a_prev = schedule.alpha_bar(t_prev);
    let sigma = sigma(eta, a_t, a_prev);
    StepCoefs {
        sqrt_a_t: a_t.sqrt(),
        sqrt_one_minus_a_t: (1.0 - a_t).sqrt(),
        sqrt_a_prev: a_prev.sqrt(),
        dir_coef: (1.0 - a_prev - sigma * sigma).max(0.0).sqrt(),
        sigma,
    }
}

fn check_direction(backend: &dyn Denoiser, dh: &EditDirection) -> Result<()> {
    let expected = backend.latent_shape();
    if dh.shape() == expected.as_slice() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context: "edit direction vs backend latent",
            expected,
            actual: dh.shape().to_vec(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn step_forward(
    x_t: &Array3<f64>,
    t: usize,
    t_prev: Option<usize>,
    guidance: Option<Guidance<'_>>,
    eta: f64,
    noise: Option<&Array3<f64>>,
    schedule: &NoiseSchedule,
    backend: &dyn Denoiser,
) -> Result<(Array3<f64>, StepCache)> {
    let c = coefs(schedule, t, t_prev, eta);
    let Prediction { eps: eps_uncond, h } = backend.predict(x_t, t)?;
    let (eps_guided, h_edit) = match guidance {
        Some(g) => {
            check_direction(backend, g.direction)?;
            let h_edit = g.mode.apply(&h, g.direction)?;
            (Some(backend.predict_injected(x_t, t, &h_edit)?), Some(h_edit))
        }
        None => (None, None),
    };
    let eps_p = eps_guided.as_ref().unwrap_or(&eps_uncond);
    let x0 = (x_t - &(eps_p * c.sqrt_one_minus_a_t)) / c.sqrt_a_t;
    let mut next = x0 * c.sqrt_a_prev + &eps_uncond * c.dir_coef;
    if c.sigma > 0.0 {
        let noise =
            noise.ok_or_else(|| Error::InvalidConfig(format!("stochastic step at t={t} needs a noise sample")))?;
        next.scaled_add(c.sigma, noise);
    }
    ensure_finite(&next, "reverse step", t)?;
    Ok((
        next,
        StepCache {
            x_t: x_t.clone(),
            h,
            h_edit,
        },
    ))
}

/// One reverse step of the asymmetric edit process.
///
/// The `x₀` prediction uses the injected noise estimate when `guidance` is
/// present; the direction term always uses the unconditional estimate.
/// `t_prev = None` steps to the clean image.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    x_t: &Array3<f64>,
    t: usize,
    t_prev: Option<usize>,
    guidance: Option<Guidance<'_>>,
    eta: f64,
    noise: Option<&Array3<f64>>,
    schedule: &NoiseSchedule,
    backend: &dyn Denoiser,
) -> Result<Array3<f64>> {
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::InvalidConfig(format!(
                "reverse step needs t > t_prev, got {t} -> {p}"
            )));
        }
    }
    step_forward(x_t, t, t_prev, guidance, eta, noise, schedule, backend).map(|(x, _)| x)
}

/// How intermediate states are kept for differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Keep every step's intermediates.
    Stored,
    /// Keep only every `segment`-th state and recompute the rest on the way back.
    Checkpointed { segment: usize },
}

impl GradientMode {
    /// Checkpointing with segments of `⌈√n⌉` steps.
    pub fn checkpointed_for(n_steps: usize) -> Self {
        GradientMode::Checkpointed {
            segment: ((n_steps as f64).sqrt().ceil() as usize).max(1),
        }
    }
}

/// An image-space objective with its gradient.
pub trait ImageObjective {
    fn value(&self, x_hat: &ImageTensor) -> Result<f64>;
    fn value_and_grad(&self, x_hat: &ImageTensor) -> Result<(f64, Array3<f64>)>;
}

/// The full decoding map `Δh ↦ x̂` for one inverted image.
pub struct Sampler<'a> {
    pub schedule: &'a NoiseSchedule,
    pub window: EditWindow,
    pub backend: &'a dyn Denoiser,
    pub noise: BoostNoise,
}

/// Value and gradient of an objective with respect to the edit direction.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub value: f64,
    pub grad: ArrayD<f64>,
    pub image: ImageTensor,
}

impl<'a> Sampler<'a> {
    pub fn new(
        schedule: &'a NoiseSchedule,
        window: EditWindow,
        backend: &'a dyn Denoiser,
        noise: BoostNoise,
    ) -> Result<Self> {
        window.validate(schedule)?;
        Ok(Self {
            schedule,
            window,
            backend,
            noise,
        })
    }

    fn steps(&self) -> Vec<(usize, Option<usize>)> {
        self.window.reverse_steps()
    }

    fn run_step(
        &self,
        index: usize,
        x: &Array3<f64>,
        guidance: Option<Guidance<'_>>,
    ) -> Result<(Array3<f64>, StepCache)> {
        let (t, t_prev) = self.steps()[index];
        let phase = self.window.phase(t);
        let guidance = if phase == Phase::Guided { guidance } else { None };
        step_forward(
            x,
            t,
            t_prev,
            guidance,
            self.window.eta(phase),
            self.noise.get(index),
            self.schedule,
            self.backend,
        )
    }

    /// Backward through step `index`: returns `∂L/∂x_t` and accumulates into `grad_dh`.
    fn step_backward(
        &self,
        index: usize,
        cache: &StepCache,
        guidance: Option<Guidance<'_>>,
        grad_next: &Array3<f64>,
        grad_dh: &mut ArrayD<f64>,
    ) -> Result<Array3<f64>> {
        let (t, t_prev) = self.steps()[index];
        let phase = self.window.phase(t);
        let c = coefs(self.schedule, t, t_prev, self.window.eta(phase));
        let grad_x0 = grad_next * c.sqrt_a_prev;
        let mut grad_x = &grad_x0 / c.sqrt_a_t;
        let grad_eps_p = &grad_x0 * (-c.sqrt_one_minus_a_t / c.sqrt_a_t);
        let mut grad_eps_u = grad_next * c.dir_coef;

        match (guidance.filter(|_| phase == Phase::Guided), &cache.h_edit) {
            (Some(g), Some(h_edit)) => {
                let (gx_inj, g_h_edit) = self.backend.predict_injected_vjp(&cache.x_t, t, h_edit, &grad_eps_p)?;
                let (g_h, g_dh) = g.mode.vjp(&cache.h, g.direction, &g_h_edit)?;
                *grad_dh += &g_dh;
                grad_x += &gx_inj;
                grad_x += &self.backend.predict_vjp(&cache.x_t, t, &grad_eps_u, Some(&g_h))?;
            }
            _ => {
                grad_eps_u += &grad_eps_p;
                grad_x += &self.backend.predict_vjp(&cache.x_t, t, &grad_eps_u, None)?;
            }
        }
        if !grad_x.iter().all(|v| v.is_finite()) || !grad_dh.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("non-finite gradient", Some(t)));
        }
        Ok(grad_x)
    }

    /// Runs the three-phase reverse process, returning the unclamped output.
    fn decode_raw(&self, state: &LatentState, guidance: Option<Guidance<'_>>) -> Result<Array3<f64>> {
        let mut x = state.x_t.clone();
        for i in 0..self.steps().len() {
            x = self.run_step(i, &x, guidance)?.0;
        }
        Ok(x)
    }

    /// Decodes the inverted state with the shared direction injected in the guided phase.
    pub fn decode(&self, state: &LatentState, dh: &EditDirection, mode: EditMode) -> Result<ImageTensor> {
        check_direction(self.backend, dh)?;
        let raw = self.decode_raw(state, Some(Guidance { mode, direction: dh }))?;
        ImageTensor::from_clamped(raw)
    }

    /// Decodes with no injection at all.
    pub fn reconstruct(&self, state: &LatentState) -> Result<ImageTensor> {
        ImageTensor::from_clamped(self.decode_raw(state, None)?)
    }

    /// `∂objective(decode(Δh))/∂Δh` by reverse-mode differentiation through
    /// every reverse step.
    pub fn gradient(
        &self,
        state: &LatentState,
        dh: &EditDirection,
        mode: EditMode,
        objective: &dyn ImageObjective,
        grad_mode: GradientMode,
    ) -> Result<Gradient> {
        check_direction(self.backend, dh)?;
        let guidance = Some(Guidance { mode, direction: dh });
        let n = self.steps().len();
        let segment = match grad_mode {
            GradientMode::Stored => n,
            GradientMode::Checkpointed { segment } => segment.max(1),
        };

        // Forward: keep the state entering each segment; in stored mode the
        // single segment's caches are kept too.
        let mut boundaries = Vec::with_capacity(n.div_ceil(segment));
        let mut stored = Vec::new();
        let mut x = state.x_t.clone();
        for i in 0..n {
            if i % segment == 0 {
                boundaries.push(x.clone());
            }
            let (next, cache) = self.run_step(i, &x, guidance)?;
            if grad_mode == GradientMode::Stored {
                stored.push(cache);
            }
            x = next;
        }

        let image = ImageTensor::from_clamped(x.clone())?;
        let (value, grad_image) = objective.value_and_grad(&image)?;
        // Clamp passes gradient only inside [-1, 1].
        let mut grad = grad_image;
        ndarray::Zip::from(&mut grad).and(&x).for_each(|g, v| {
            if !(-1.0..=1.0).contains(v) {
                *g = 0.0;
            }
        });

        let mut grad_dh = ArrayD::zeros(dh.shape());
        for (seg_idx, start_state) in boundaries.iter().enumerate().rev() {
            let start = seg_idx * segment;
            let end = (start + segment).min(n);
            let caches = if grad_mode == GradientMode::Stored {
                std::mem::take(&mut stored)
            } else {
                let mut caches = Vec::with_capacity(end - start);
                let mut x = start_state.clone();
                for i in start..end {
                    let (next, cache) = self.run_step(i, &x, guidance)?;
                    caches.push(cache);
                    x = next;
                }
                caches
            };
            for (offset, cache) in caches.iter().enumerate().rev() {
                grad = self.step_backward(start + offset, cache, guidance, &grad, &mut grad_dh)?;
            }
        }
        Ok(Gradient {
            value,
            grad: grad_dh,
            image,
        })
    }
}

/// Runs the reverse process for one direction and mode; see [`Sampler::decode`].
pub fn denoise_with_edit(
    state: &LatentState,
    dh: &EditDirection,
    mode: EditMode,
    window: &EditWindow,
    schedule: &NoiseSchedule,
    backend: &dyn Denoiser,
    noise: BoostNoise,
) -> Result<ImageTensor> {
    Sampler::new(schedule, *window, backend, noise)?.decode(state, dh, mode)
}

/// Gradient of `objective ∘ decode` at `dh`; see [`Sampler::gradient`].
pub fn compute_gradient(
    sampler: &Sampler<'_>,
    state: &LatentState,
    dh: &EditDirection,
    mode: EditMode,
    objective: &dyn ImageObjective,
    grad_mode: GradientMode,
) -> Result<Gradient> {
    sampler.gradient(state, dh, mode, objective, grad_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyDenoiser, ToyDenoiserConfig};
    use crate::image::synthetic_face;

    fn setup(size: usize, steps: usize) -> (NoiseSchedule, EditWindow, ToyDenoiser, ImageTensor) {
        let schedule = NoiseSchedule::default();
        let window = EditWindow::with_steps(steps);
        let backend = ToyDenoiser::new(size, size, schedule.alphas_cumprod(), ToyDenoiserConfig::default()).unwrap();
        (schedule, window, backend, synthetic_face(size, size, 0))
    }

    fn max_abs(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    struct Quadratic(Array3<f64>);

    impl ImageObjective for Quadratic {
        fn value(&self, x: &ImageTensor) -> Result<f64> {
            Ok(0.5 * (x.data() - &self.0).mapv(|v| v * v).sum())
        }
        fn value_and_grad(&self, x: &ImageTensor) -> Result<(f64, Array3<f64>)> {
            Ok((self.value(x)?, x.data() - &self.0))
        }
    }

    struct Constant;

    impl ImageObjective for Constant {
        fn value(&self, _: &ImageTensor) -> Result<f64> {
            Ok(3.0)
        }
        fn value_and_grad(&self, x: &ImageTensor) -> Result<(f64, Array3<f64>)> {
            Ok((3.0, Array3::zeros(x.data().raw_dim())))
        }
    }

    #[test]
    fn zero_prediction_inversion_is_scaling() {
        let (schedule, window, _, x) = setup(8, 16);
        let backend = ToyDenoiser::zero(8, 8, schedule.alphas_cumprod()).unwrap();
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let expected = x.data() * schedule.alpha_bar(Some(600)).sqrt();
        assert!(max_abs(&state.x_t, &expected) < 1e-12);
        let ts: Vec<usize> = state.h_list.iter().map(|(t, _)| *t).collect();
        assert_eq!(ts.len(), 16);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_prediction_step_is_rescaling() {
        let schedule = NoiseSchedule::default();
        let backend = ToyDenoiser::zero(8, 8, schedule.alphas_cumprod()).unwrap();
        let x = synthetic_face(8, 8, 1).into_inner();
        let out = reverse_step(&x, 500, Some(300), None, 0.0, None, &schedule, &backend).unwrap();
        let ratio = (schedule.alpha_bar(Some(300)) / schedule.alpha_bar(Some(500))).sqrt();
        assert!(max_abs(&out, &(&x * ratio)) < 1e-12);
    }

    #[test]
    fn zero_direction_step_equals_plain_step() {
        let (schedule, _, backend, x) = setup(8, 16);
        let x = x.data() * 0.5;
        let dh = EditDirection::zeros(&backend.latent_shape());
        let guided = Guidance {
            mode: EditMode::Linear { lambda: 1000.0 },
            direction: &dh,
        };
        let a = reverse_step(&x, 520, Some(480), Some(guided), 0.0, None, &schedule, &backend).unwrap();
        let b = reverse_step(&x, 520, Some(480), None, 0.0, None, &schedule, &backend).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stochastic_step_is_reproducible() {
        let (schedule, window, backend, x) = setup(8, 16);
        let noise = BoostNoise::draw(7, &window, [8, 8, 3]);
        let last = window.n_denoise - 2;
        let n = noise.get(last).unwrap();
        let a = reverse_step(x.data(), 40, Some(0), None, 1.0, Some(n), &schedule, &backend).unwrap();
        let b = reverse_step(x.data(), 40, Some(0), None, 1.0, Some(n), &schedule, &backend).unwrap();
        assert_eq!(a, b);
        assert!(reverse_step(x.data(), 40, Some(0), None, 1.0, None, &schedule, &backend).is_err());
    }

    #[test]
    fn rejects_bad_direction_shape() {
        let (schedule, window, backend, x) = setup(8, 16);
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let dh = EditDirection::zeros(&[3]);
        let err = denoise_with_edit(
            &state,
            &dh,
            EditMode::Linear { lambda: 1.0 },
            &window,
            &schedule,
            &backend,
            BoostNoise::none(&window),
        );
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn deterministic_round_trip() {
        let (schedule, mut window, backend, x) = setup(16, 16);
        window.boost_eta = 0.0;
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let dh = EditDirection::zeros(&backend.latent_shape());
        let out = denoise_with_edit(
            &state,
            &dh,
            EditMode::Linear { lambda: 1000.0 },
            &window,
            &schedule,
            &backend,
            BoostNoise::none(&window),
        )
        .unwrap();
        assert!(max_abs(out.data(), x.data()) < 1e-10);
    }

    #[test]
    fn linear_edit_changes_face_region() {
        let (schedule, window, backend, x) = setup(16, 16);
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let noise = BoostNoise::draw(1006, &window, x.shape());
        let sampler = Sampler::new(&schedule, window, &backend, noise).unwrap();
        let mode = EditMode::Linear { lambda: 1000.0 };
        let zero = EditDirection::zeros(&backend.latent_shape());
        let shape = backend.latent_shape();
        let n = shape.iter().product();
        let dh = EditDirection::from_vec(&shape, (0..n).map(|i| 0.02 * (i as f64).sin()).collect()).unwrap();
        let base = sampler.decode(&state, &zero, mode).unwrap();
        let edited = sampler.decode(&state, &dh, mode).unwrap();
        let mask = crate::image::soft_ellipse(16, 16);
        let face_diff: f64 = edited
            .data()
            .indexed_iter()
            .filter(|((i, j, _), _)| mask[[*i, *j]] > 0.5)
            .map(|(ix, v)| (v - base.data()[ix]).abs())
            .sum();
        assert!(face_diff > 1e-3, "edit left the face unchanged ({face_diff})");
    }

    fn fd_gradient_check(mode: EditMode, seed: u64) {
        let (schedule, window, backend, x) = setup(12, 8);
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let noise = BoostNoise::draw(seed, &window, x.shape());
        let sampler = Sampler::new(&schedule, window, &backend, noise).unwrap();
        let target = synthetic_face(12, 12, 3).into_inner() * 0.5;
        let objective = Quadratic(target);
        let shape = backend.latent_shape();
        let init: Vec<f64> = crate::rng::normal_vec(&mut seeded(seed, 99), 32)
            .into_iter()
            .map(|v| v * 0.05)
            .collect();
        let dh = EditDirection::from_vec(&shape, init.clone()).unwrap();
        let g = sampler
            .gradient(&state, &dh, mode, &objective, GradientMode::Stored)
            .unwrap();
        let step = 1e-3
            / match mode {
                EditMode::Linear { lambda } => lambda,
                _ => 1.0,
            };
        for i in 0..32 {
            let eval = |delta: f64| {
                let mut v = init.clone();
                v[i] += delta;
                let d = EditDirection::from_vec(&shape, v).unwrap();
                objective.value(&sampler.decode(&state, &d, mode).unwrap()).unwrap()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let an = g.grad.as_slice().unwrap()[i];
            let scale = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / scale < 1e-4, "coord {i}: fd {fd} vs analytic {an}");
        }
        let ck = sampler
            .gradient(&state, &dh, mode, &objective, GradientMode::Checkpointed { segment: 3 })
            .unwrap();
        let diff = g
            .grad
            .iter()
            .zip(ck.grad.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-6);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        fd_gradient_check(EditMode::Linear { lambda: 1000.0 }, 1);
        fd_gradient_check(EditMode::Tangent { renormalize: true }, 2);
        fd_gradient_check(EditMode::Tangent { renormalize: false }, 3);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let (schedule, window, backend, x) = setup(8, 8);
        let state = ddim_invert(&x, &schedule, &window, &backend).unwrap();
        let sampler = Sampler::new(&schedule, window, &backend, BoostNoise::draw(1, &window, x.shape())).unwrap();
        let dh = EditDirection::from_vec(&backend.latent_shape(), vec![0.01; 32]).unwrap();
        let g = sampler
            .gradient(
                &state,
                &dh,
                EditMode::Tangent { renormalize: true },
                &Constant,
                GradientMode::Stored,
            )
            .unwrap();
        assert!(g.grad.iter().all(|v| *v == 0.0));
        assert_eq!(g.value, 3.0);
    }
}
