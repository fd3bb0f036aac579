//! Optimizes an identity-editing direction for a synthetic face on the toy
//! pipeline and scores the result.
//!
//! Usage: cargo run --release --example deidentify [linear|tangent] [out.png]

use latent_deid::backend::{ToyDenoiser, ToyDenoiserConfig};
use latent_deid::evaluation::evaluate_pair;
use latent_deid::image::synthetic_face;
use latent_deid::optimizer::{optimize, ModeKind, OptimizationConfig};
use latent_deid::providers::{
    toy_attribute_predictor, toy_eval_providers, toy_face_parser, toy_identity_embedder, LossProviders,
};
use latent_deid::schedule::{EditWindow, NoiseSchedule};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: ModeKind = args.next().as_deref().unwrap_or("tangent").parse()?;
    let out = args.next();

    let schedule = NoiseSchedule::default();
    let backend = ToyDenoiser::new(32, 32, schedule.alphas_cumprod(), ToyDenoiserConfig::default())?;
    let (embedder, attributes, parser) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
    let providers = LossProviders {
        embedder: &embedder,
        attributes: &attributes,
        parser: &parser,
    };

    let x = synthetic_face(32, 32, 0);
    let config = OptimizationConfig {
        mode,
        n_opt: 20,
        window: EditWindow::with_steps(8),
        ..Default::default()
    };
    let result = optimize(&x, &config, &schedule, &backend, providers)?;

    println!("step      total         id       attr       mask     ‖Δh‖");
    for r in &result.log.records {
        println!(
            "{:>4} {:>10.4} {:>10.6} {:>10.6} {:>10.4} {:>8.5}",
            r.step, r.total, r.id, r.attr, r.mask, r.norm
        );
    }
    for event in &result.log.events {
        println!("event: {event}");
    }

    let scores = evaluate_pair(&x, &result.image, &toy_eval_providers());
    println!("{scores:#?}");
    if let Some(path) = out {
        result.image.save_png(std::path::Path::new(&path))?;
        println!("wrote {path}");
    }
    Ok(())
}
