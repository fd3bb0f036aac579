//! Records latent snapshots for a few optimizations and projects every path
//! onto the principal components of the pooled snapshots.

use latent_deid::backend::{ToyDenoiser, ToyDenoiserConfig};
use latent_deid::evaluation::pca_project;
use latent_deid::image::synthetic_face;
use latent_deid::optimizer::{optimize, OptimizationConfig};
use latent_deid::providers::{toy_attribute_predictor, toy_face_parser, toy_identity_embedder, LossProviders};
use latent_deid::schedule::{EditWindow, NoiseSchedule};
use ndarray::{concatenate, Axis};

fn main() -> anyhow::Result<()> {
    let schedule = NoiseSchedule::default();
    let backend = ToyDenoiser::new(32, 32, schedule.alphas_cumprod(), ToyDenoiserConfig::default())?;
    let (embedder, attributes, parser) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
    let providers = LossProviders {
        embedder: &embedder,
        attributes: &attributes,
        parser: &parser,
    };
    let config = OptimizationConfig {
        n_opt: 12,
        window: EditWindow::with_steps(8),
        record_snapshots: true,
        ..Default::default()
    };

    let mut paths = Vec::new();
    for variant in 0..3 {
        let x = synthetic_face(32, 32, variant);
        let result = optimize(&x, &config, &schedule, &backend, providers)?;
        paths.push(result.log.snapshots().expect("snapshots were requested"));
    }
    let views: Vec<_> = paths.iter().map(|p| p.view()).collect();
    let pool = concatenate(Axis(0), &views)?;
    let projected = pca_project(&pool, &paths, 2)?;
    for (i, path) in projected.iter().enumerate() {
        println!("face {i}");
        for (step, row) in path.rows().into_iter().enumerate() {
            println!("  step {step:>2}: pc1 {:+.5}  pc2 {:+.5}", row[0], row[1]);
        }
    }
    Ok(())
}
