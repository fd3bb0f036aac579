//! Compares the analytic gradient of the end-to-end loss with central
//! differences, and the checkpointed gradient with the stored one.

use latent_deid::backend::{Denoiser, ToyDenoiser, ToyDenoiserConfig};
use latent_deid::geometry::EditDirection;
use latent_deid::image::synthetic_face;
use latent_deid::optimizer::{initialize_direction, prepare, ModeKind, OptimizationConfig};
use latent_deid::providers::{toy_attribute_predictor, toy_face_parser, toy_identity_embedder, LossProviders};
use latent_deid::sampler::{GradientMode, ImageObjective};
use latent_deid::schedule::{EditWindow, NoiseSchedule};

fn main() -> latent_deid::Result<()> {
    let schedule = NoiseSchedule::default();
    let backend = ToyDenoiser::new(32, 32, schedule.alphas_cumprod(), ToyDenoiserConfig::default())?;
    let (embedder, attributes, parser) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
    let providers = LossProviders {
        embedder: &embedder,
        attributes: &attributes,
        parser: &parser,
    };
    let x = synthetic_face(32, 32, 0);

    for (mode, step) in [(ModeKind::Linear, 1e-6), (ModeKind::Tangent, 1e-4)] {
        let config = OptimizationConfig {
            mode,
            window: EditWindow::with_steps(8),
            ..Default::default()
        };
        let p = prepare(&x, &config, &schedule, &backend, providers)?;
        let dh = initialize_direction(&backend.latent_shape(), config.init_norm, 7)?;
        let edit = config.edit_mode();
        let stored = p
            .sampler
            .gradient(&p.state, &dh, edit, &p.objective, GradientMode::Stored)?;
        let ckpt = p
            .sampler
            .gradient(&p.state, &dh, edit, &p.objective, GradientMode::checkpointed_for(8))?;
        let ckpt_diff = (&stored.grad - &ckpt.grad).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "{mode:?}: loss {:.6}, checkpointed vs stored max diff {ckpt_diff:.1e}",
            stored.value
        );

        let grad: Vec<f64> = stored.grad.iter().copied().collect();
        for c in [0, 5, 11, 17, 29] {
            let at = |s: f64| -> latent_deid::Result<f64> {
                let mut v = dh.to_flat();
                v[c] += s;
                let d = EditDirection::from_vec(dh.shape(), v)?;
                p.objective.value(&p.sampler.decode(&p.state, &d, edit)?)
            };
            let fd = (at(step)? - at(-step)?) / (2.0 * step);
            println!("  coord {c:>2}: analytic {:+.6e}  central {fd:+.6e}", grad[c]);
        }
    }
    Ok(())
}
