//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use latent_deid::attributes::{attribute_index, set_attribute_targets};
use latent_deid::backend::{Denoiser, ToyDenoiser, ToyDenoiserConfig};
use latent_deid::evaluation::{rms_deviation, sid, threshold_score, ColumnMeans, MetricsReport, GAZE_TAU, POSE_TAU};
use latent_deid::geometry::{tangent_edit, tangent_project, EditDirection, EditMode, LatentTensor};
use latent_deid::image::{synthetic_face, ImageTensor};
use latent_deid::losses::{
    attribute_loss, attribute_loss_with, identity_loss, mask_loss, AttributeDistribution, KlVariant, LossWeights,
    SourceCache,
};
use latent_deid::optimizer::{initialize_direction, optimize, prepare, ModeKind, OptimizationConfig};
use latent_deid::providers::{
    toy_attribute_predictor, toy_face_parser, toy_identity_embedder, AttributePredictor, FaceMask, LossProviders,
    ToyAttributePredictor, ToyFaceParser, ToyIdentityEmbedder,
};
use latent_deid::rng::{normal_vec, seeded};
use latent_deid::sampler::{ddim_invert, BoostNoise, GradientMode, Sampler};
use latent_deid::schedule::{EditWindow, NoiseSchedule};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Toy {
    schedule: NoiseSchedule,
    backend: ToyDenoiser,
    embedder: ToyIdentityEmbedder,
    attributes: ToyAttributePredictor,
    parser: ToyFaceParser,
}

impl Toy {
    fn new(size: usize) -> Self {
        let schedule = NoiseSchedule::default();
        let backend = ToyDenoiser::new(size, size, schedule.alphas_cumprod(), ToyDenoiserConfig::default()).unwrap();
        Self {
            schedule,
            backend,
            embedder: toy_identity_embedder(),
            attributes: toy_attribute_predictor(),
            parser: toy_face_parser(),
        }
    }

    fn providers(&self) -> LossProviders<'_> {
        LossProviders {
            embedder: &self.embedder,
            attributes: &self.attributes,
            parser: &self.parser,
        }
    }
}

fn overall_reproduction() -> Outcome {
    let mut reader = csv::Reader::from_reader(include_str!("../data/reference_scores.csv").as_bytes());
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    let mut recomputed = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let v: Vec<f64> = (2..9).map(|i| rec[i].parse().unwrap()).collect();
        let report = MetricsReport::from_means(ColumnMeans::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))
            .map_err(|e| e.to_string())?;
        let diff = (report.overall - v[6]).abs();
        ensure!(
            diff <= 0.002,
            "{} {}: recomputed {:.5} vs published {:.3}",
            &rec[0],
            &rec[1],
            report.overall,
            v[6]
        );
        worst = worst.max(diff);
        recomputed.insert(format!("{}/{}", &rec[0], &rec[1]), report.overall);
        rows += 1;
    }
    ensure!(rows == 18, "expected 18 rows, read {rows}");
    for (key, published) in [
        ("linear-edit/CelebA-HQ", 0.786),
        ("DeepPrivacy2/CelebA-HQ", 0.714),
        ("tangent-edit/FFHQ", 0.736),
    ] {
        let got = recomputed[key];
        ensure!((got - published).abs() <= 0.002, "{key}: {got:.5} vs {published}");
    }
    Ok(format!("18 rows within 0.002 (worst {worst:.5})"))
}

fn random_vec(rng: &mut impl rand::Rng, n: usize, scale: f64) -> Vec<f64> {
    normal_vec(rng, n).into_iter().map(|v| v * scale).collect()
}

fn tangent_geometry() -> Outcome {
    let mut rng = seeded(2024, 0);
    let mut pairs = 0;
    let mut worst_norm: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    for (dim, count) in [(8usize, 450usize), (512, 450), (8 * 8 * 512, 100)] {
        for _ in 0..count {
            let z_scale = 0.5 + 10.0 * rand::Rng::random::<f64>(&mut rng);
            let dh_scale = (0.05 + 3.0 * rand::Rng::random::<f64>(&mut rng)) / (dim as f64).sqrt();
            let z = LatentTensor::from_vec(&[dim], random_vec(&mut rng, dim, z_scale)).unwrap();
            let dh = EditDirection::from_vec(&[dim], random_vec(&mut rng, dim, dh_scale)).unwrap();
            let out = tangent_edit(&z, &dh, true).map_err(|e| e.to_string())?;
            let rel = (out.norm() - z.norm()).abs() / z.norm();
            ensure!(rel <= 1e-6, "norm drift {rel:e} at d={dim}");
            let p = tangent_project(&z, &dh).map_err(|e| e.to_string())?;
            let dot: f64 = p.to_flat().iter().zip(z.to_flat()).map(|(a, b)| a * b).sum();
            let orth = dot.abs() / (z.norm() * p.norm());
            ensure!(orth <= 1e-6, "orthogonality {orth:e} at d={dim}");
            worst_norm = worst_norm.max(rel);
            worst_orth = worst_orth.max(orth);
            pairs += 1;

            // θ → 0 and θ = π limits.
            let tiny = EditDirection::new(dh.data() * (1e-12 / dh.norm())).unwrap();
            let near = tangent_edit(&z, &tiny, true).map_err(|e| e.to_string())?;
            let d0 = near
                .to_flat()
                .iter()
                .zip(z.to_flat())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ensure!(d0 <= 1e-6 * z.norm(), "θ→0 limit off by {d0:e}");
            let big = EditDirection::new(dh.data() * (5.0 / dh.norm())).unwrap();
            let anti = tangent_edit(&z, &big, true).map_err(|e| e.to_string())?;
            let dpi = anti
                .to_flat()
                .iter()
                .zip(z.to_flat())
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max);
            ensure!(dpi <= 1e-6 * z.norm(), "θ=π limit off by {dpi:e}");
        }
    }
    Ok(format!(
        "{pairs} pairs over d∈{{8,512,32768}}; max norm drift {worst_norm:.1e}, max |cos| {worst_orth:.1e}"
    ))
}

fn gradient_correctness() -> Outcome {
    let toy = Toy::new(32);
    let x = synthetic_face(32, 32, 3);
    let mut summary = Vec::new();
    for mode in [ModeKind::Linear, ModeKind::Tangent] {
        let config = OptimizationConfig {
            mode,
            window: EditWindow::with_steps(8),
            ..OptimizationConfig::default()
        };
        let p = prepare(&x, &config, &toy.schedule, &toy.backend, toy.providers()).map_err(|e| e.to_string())?;
        let edit = config.edit_mode();
        let dh = initialize_direction(&toy.backend.latent_shape(), 0.1, 77).unwrap();
        let stored = p
            .sampler
            .gradient(&p.state, &dh, edit, &p.objective, GradientMode::Stored)
            .map_err(|e| e.to_string())?;
        let ckpt = p
            .sampler
            .gradient(&p.state, &dh, edit, &p.objective, GradientMode::checkpointed_for(8))
            .map_err(|e| e.to_string())?;
        let ck_diff = (&stored.grad - &ckpt.grad).iter().map(|v| v.abs()).fold(0.0, f64::max);
        ensure!(
            ck_diff <= 1e-6,
            "{mode:?}: checkpointed vs stored differ by {ck_diff:e}"
        );

        let value = |d: &EditDirection| -> f64 {
            let img = p.sampler.decode(&p.state, d, edit).unwrap();
            latent_deid::sampler::ImageObjective::value(&p.objective, &img).unwrap()
        };
        let step = match mode {
            ModeKind::Linear => 1e-3 / config.lambda,
            ModeKind::Tangent => 1e-4,
        };
        let mut coords: Vec<usize> = (0..dh.dim()).collect();
        coords.shuffle(&mut seeded(5, 0));
        let flat_grad: Vec<f64> = stored.grad.iter().copied().collect();
        let mut worst: f64 = 0.0;
        for &c in coords.iter().take(20) {
            let bump = |s: f64| {
                let mut v = dh.to_flat();
                v[c] += s;
                EditDirection::from_vec(dh.shape(), v).unwrap()
            };
            let fd = (value(&bump(step)) - value(&bump(-step))) / (2.0 * step);
            let g = flat_grad[c];
            let rel = (fd - g).abs() / fd.abs().max(g.abs());
            ensure!(
                rel <= 1e-4,
                "{mode:?} coord {c}: fd {fd:e} vs analytic {g:e} (rel {rel:e})"
            );
            worst = worst.max(rel);
        }
        summary.push(format!(
            "{mode:?}: 20 coords, max rel {worst:.1e}, ckpt diff {ck_diff:.1e}"
        ));
    }
    Ok(summary.join("; "))
}

fn loss_unit_values() -> Outcome {
    let e = [0.1, -2.0, 0.7];
    let id = identity_loss(&e, &e).unwrap();
    ensure!((id - 1.0).abs() <= 1e-9, "identity_loss(e, e) = {id}");
    let a = AttributeDistribution::with_len(vec![0.5, 0.5]).unwrap();
    let self_kl = attribute_loss(&a, &a).unwrap();
    ensure!(self_kl.abs() <= 1e-9, "attribute_loss(a, a) = {self_kl}");
    let b = AttributeDistribution::with_len(vec![0.25, 0.75]).unwrap();
    let kl = attribute_loss(&a, &b).unwrap();
    let oracle = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    ensure!(
        (kl - oracle).abs() <= 1e-6,
        "attribute loss {kl} vs closed form {oracle}"
    );
    ensure!(
        format!("{kl:.5}") == "0.14384",
        "attribute loss {kl} does not round to 0.14384"
    );

    let x = ImageTensor::new(Array3::zeros((3, 3, 3))).unwrap();
    let mut y = Array3::zeros((3, 3, 3));
    y[[1, 2, 0]] = 0.4;
    let mut m = Array2::ones((3, 3));
    m[[1, 2]] = 0.25;
    let ml = mask_loss(&x, &ImageTensor::new(y).unwrap(), &FaceMask::new(m).unwrap()).unwrap();
    ensure!((ml - 0.3).abs() <= 1e-9, "mask single-pixel = {ml}");

    let total = LossWeights::default().combine(0.5, 0.2, 4.0).total;
    ensure!((total - 2.7).abs() <= 1e-9, "weighted total = {total}");
    Ok(format!("id 1, KL 0 and {kl:.5}, mask {ml:.3}, total {total:.3}"))
}

fn metric_formulas() -> Outcome {
    let rms = rms_deviation(&[3.0, 4.0, 0.0]).unwrap();
    ensure!((rms - 2.88675).abs() <= 1e-5, "rms = {rms}");
    let pose = threshold_score(rms, POSE_TAU);
    ensure!((pose - 0.42265).abs() <= 1e-5, "pose = {pose}");
    let gaze = threshold_score(rms_deviation(&[9.0, 12.0]).unwrap(), GAZE_TAU);
    ensure!((gaze - 0.29289).abs() <= 1e-5, "gaze = {gaze}");
    let e = [0.2, 1.0, -0.5];
    let sids = [
        sid(&e, &e).unwrap(),
        sid(&[1.0, 0.0], &[0.0, 3.0]).unwrap(),
        sid(&e, &[-0.2, -1.0, 0.5]).unwrap(),
    ];
    for (got, want) in sids.iter().zip([0.0, 1.0, 2.0]) {
        ensure!((got - want).abs() <= 1e-5, "sid {got} vs {want}");
    }
    Ok(format!("rms {rms:.5}, pose {pose:.5}, gaze {gaze:.5}, sid {sids:?}"))
}

fn optimization_behavior() -> Outcome {
    let toy = Toy::new(32);
    let mut parts = Vec::new();
    for mode in [ModeKind::Linear, ModeKind::Tangent] {
        let mut descents = 0;
        for k in 0..20u64 {
            let config = OptimizationConfig {
                mode,
                n_opt: 10,
                seed: 1006 + k,
                window: EditWindow::with_steps(8),
                ..OptimizationConfig::default()
            };
            let x = synthetic_face(32, 32, k);
            let out = optimize(&x, &config, &toy.schedule, &toy.backend, toy.providers()).map_err(|e| e.to_string())?;
            if out.log.last_total() < out.log.first_total() {
                descents += 1;
            }
        }
        ensure!(descents >= 18, "{mode:?}: loss decreased in only {descents}/20 runs");
        parts.push(format!("{mode:?} {descents}/20"));
    }

    let config = OptimizationConfig {
        n_opt: 10,
        window: EditWindow::with_steps(8),
        ..OptimizationConfig::default()
    };
    let x = synthetic_face(32, 32, 0);
    let a = optimize(&x, &config, &toy.schedule, &toy.backend, toy.providers()).map_err(|e| e.to_string())?;
    let b = optimize(&x, &config, &toy.schedule, &toy.backend, toy.providers()).map_err(|e| e.to_string())?;
    let same_image = a
        .image
        .data()
        .iter()
        .zip(b.image.data())
        .all(|(p, q)| p.to_bits() == q.to_bits());
    let same_log = a
        .log
        .records
        .iter()
        .zip(&b.log.records)
        .all(|(p, q)| p.total.to_bits() == q.total.to_bits() && p.norm.to_bits() == q.norm.to_bits());
    ensure!(
        same_image && same_log && a.direction == b.direction,
        "seed 1006 runs differ"
    );
    Ok(format!("descent {}; seed 1006 bit-identical", parts.join(", ")))
}

fn reconstruction() -> Outcome {
    let toy = Toy::new(32);
    let window = EditWindow::default();
    let counts = window.phase_counts();
    let partition_ok = counts.iter().all(|&c| c > 0) && counts.iter().sum::<usize>() == 16;

    let x = synthetic_face(32, 32, 0);
    let run = |window: EditWindow| -> f64 {
        let state = ddim_invert(&x, &toy.schedule, &window, &toy.backend).unwrap();
        let noise = BoostNoise::draw(1006, &window, x.shape());
        let sampler = Sampler::new(&toy.schedule, window, &toy.backend, noise).unwrap();
        let zero = EditDirection::zeros(&toy.backend.latent_shape());
        let out = sampler
            .decode(&state, &zero, EditMode::Linear { lambda: 1000.0 })
            .unwrap();
        out.data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let err = run(window);
    let deterministic = run(EditWindow {
        boost_eta: 0.0,
        ..window
    });
    let detail = format!(
        "phases {counts:?}; round-trip max-abs {err:.2e} with the stochastic boost, {deterministic:.2e} with eta=0 throughout"
    );
    ensure!(partition_ok, "phase partition {counts:?} has an empty group");
    ensure!(err <= 1e-4, "{detail}");
    Ok(detail)
}

fn attribute_targeting() -> Outcome {
    let toy = Toy::new(32);
    let x = synthetic_face(32, 32, 0);
    let source = SourceCache::compute(&x, toy.providers()).map_err(|e| e.to_string())?;
    let base = AttributeDistribution::new(toy.attributes.predict(&x).unwrap()).unwrap();
    ensure!(
        base == source.attributes,
        "cached source distribution differs from a fresh prediction"
    );
    let target = set_attribute_targets(&base, &BTreeMap::from([("Smile".to_string(), 0.9)])).unwrap();
    let changed: Vec<usize> = (0..40).filter(|&i| target.probs()[i] != base.probs()[i]).collect();
    let smile = attribute_index("Smiling").unwrap();
    ensure!(changed == vec![smile], "changed entries {changed:?}");
    ensure!(target.probs()[smile] == 0.9, "target entry {}", target.probs()[smile]);
    let at_source = attribute_loss(&base, &base).unwrap();
    let at_target = attribute_loss(&target, &base).unwrap();
    ensure!(
        at_target > at_source,
        "loss vs target {at_target} not above loss vs source {at_source}"
    );
    let bern = attribute_loss_with(&target, &base, KlVariant::Bernoulli).unwrap();
    ensure!(bern > 0.0, "Bernoulli variant {bern}");
    Ok(format!(
        "1 entry changed (index {smile}, source p={:.4}); loss {at_source:.1} -> {at_target:.5}",
        base.probs()[smile]
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "1 overall-metric reproduction",
            overall_reproduction,
            Duration::from_secs(1),
        ),
        ("2 tangent geometry", tangent_geometry, Duration::from_secs(10)),
        ("3 gradient correctness", gradient_correctness, Duration::from_secs(120)),
        ("4 loss-term unit values", loss_unit_values, Duration::from_secs(1)),
        ("5 metric formulas", metric_formulas, Duration::from_secs(1)),
        (
            "6 optimization behavior",
            optimization_behavior,
            Duration::from_secs(300),
        ),
        ("7 reconstruction", reconstruction, Duration::from_secs(30)),
        ("8 attribute targeting", attribute_targeting, Duration::from_secs(1)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{timing}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} [{timing}]");
            }
        }
        if elapsed > budget {
            println!("     note: criterion {name} exceeded its runtime budget in this build profile");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
