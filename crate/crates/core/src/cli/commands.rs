use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use ndarray::{concatenate, Array2, Axis};

use super::config::{RunConfig, RESOLVED_CONFIG_FILE};
use super::{AblateArgs, Command, ConfigFlags, DeidentifyArgs, EvaluateArgs, TrajectoryArgs};
use crate::attributes::parse_override;
use crate::evaluation::{aggregate, evaluate_pair, write_table, ColumnMeans, MetricsReport, PairScores, Pca, COLUMNS};
use crate::image::ImageTensor;
use crate::optimizer::optimize;
use crate::providers::{LossProviders, ProviderRegistry};
use crate::trajectory::read_snapshot_file;

pub(super) fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Deidentify(a) => cmd_deidentify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Trajectory(a) => cmd_trajectory(a),
    }
}

fn resolve_config(flags: &ConfigFlags) -> anyhow::Result<RunConfig> {
    let (mut c, _) = RunConfig::resolve_base(flags.config.as_deref())?;
    let o = &mut c.optimization;
    if let Some(v) = flags.mode {
        o.mode = v;
    }
    if let Some(v) = flags.lambda {
        o.lambda = v;
    }
    if let Some(v) = flags.lr {
        o.lr = v;
    }
    if let Some(v) = flags.n_opt {
        o.n_opt = v;
    }
    if let Some(v) = flags.denoise_steps {
        o.window.n_denoise = v;
    }
    if let Some(v) = flags.init_norm {
        o.init_norm = v;
    }
    if let Some(v) = flags.seed {
        o.seed = v;
    }
    if let Some(v) = flags.lambda_id {
        o.weights.lambda_id = v;
    }
    if let Some(v) = flags.lambda_attr {
        o.weights.lambda_attr = v;
    }
    if let Some(v) = flags.lambda_mask {
        o.weights.lambda_mask = v;
    }
    for spec in &flags.fix_attr {
        let (name, value) = parse_override(spec)?;
        o.attribute_targets.insert(name, value);
    }
    if flags.snapshots {
        o.record_snapshots = true;
    }
    if let Some(v) = flags.workers {
        c.workers = v;
    }
    let p = &mut c.providers;
    for (slot, flag) in [
        (&mut p.backend, &flags.backend),
        (&mut p.embedder, &flags.embedder),
        (&mut p.attributes, &flags.attributes),
        (&mut p.parser, &flags.parser),
        (&mut p.eval, &flags.eval),
    ] {
        if let Some(v) = flag {
            *slot = v.clone();
        }
    }
    c.validate()?;
    Ok(c)
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Expands directories into their PNG files (sorted); files pass through.
pub fn collect_images(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("cannot list {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_png(p))
                .collect();
            found.sort();
            out.extend(found);
        } else if input.is_file() {
            out.push(input.clone());
        } else {
            bail!("input {} does not exist", input.display());
        }
    }
    if out.is_empty() {
        bail!("no PNG images found in the given inputs");
    }
    let mut stems = BTreeSet::new();
    for p in &out {
        if !stems.insert(stem(p)) {
            bail!("two inputs share the file name '{}'; outputs would collide", stem(p));
        }
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// What one de-identified image produced.
#[derive(Debug, Clone)]
pub struct DeidentifyOutcome {
    pub name: String,
    pub original: ImageTensor,
    pub edited: ImageTensor,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Runs the optimization for one image and writes `<name>.png`,
/// `<name>.trajectory.csv` and, if recorded, `<name>.latents.bin`.
pub fn deidentify_image(
    input: &Path,
    config: &RunConfig,
    registry: &ProviderRegistry,
    out_dir: &Path,
) -> anyhow::Result<DeidentifyOutcome> {
    let x = ImageTensor::load_png(input)?;
    let schedule = config.schedule.build()?;
    let settings = config.adapter_settings(x.shape(), &schedule);
    let names = &config.providers;
    let backend = registry.backend(&names.backend, &settings)?;
    let embedder = registry.embedder(&names.embedder, &settings)?;
    let attributes = registry.attributes(&names.attributes, &settings)?;
    let parser = registry.parser(&names.parser, &settings)?;
    let providers = LossProviders {
        embedder: embedder.as_ref(),
        attributes: attributes.as_ref(),
        parser: parser.as_ref(),
    };
    let result = optimize(&x, &config.optimization, &schedule, backend.as_ref(), providers)?;

    let name = stem(input);
    result.image.save_png(&out_dir.join(format!("{name}.png")))?;
    result.log.write_text(&out_dir.join(format!("{name}.trajectory.csv")))?;
    if config.optimization.record_snapshots {
        result
            .log
            .write_snapshots(&out_dir.join(format!("{name}.latents.bin")))?;
    }
    for event in &result.log.events {
        eprintln!("{name}: {event}");
    }
    Ok(DeidentifyOutcome {
        name,
        original: x,
        edited: result.image,
        initial_loss: result.log.first_total().unwrap_or(f64::NAN),
        final_loss: result.log.last_total().unwrap_or(f64::NAN),
    })
}

type BatchResult = Vec<(PathBuf, anyhow::Result<DeidentifyOutcome>)>;

/// Processes `images` with `config.workers` threads; results keep input order.
fn run_batch(images: &[PathBuf], config: &RunConfig, out_dir: &Path) -> anyhow::Result<BatchResult> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    std::fs::write(out_dir.join(RESOLVED_CONFIG_FILE), config.to_dotted_toml()?)
        .with_context(|| format!("cannot write config echo into {}", out_dir.display()))?;
    let registry = ProviderRegistry::with_defaults();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<anyhow::Result<DeidentifyOutcome>>>> =
        images.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(images.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = images.get(i) else { break };
                let r = deidentify_image(path, config, &registry, out_dir);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    Ok(images
        .iter()
        .cloned()
        .zip(slots.into_iter().map(|s| {
            s.into_inner()
                .expect("result slot")
                .unwrap_or_else(|| Err(anyhow!("worker did not run")))
        }))
        .collect())
}

fn report_failures(results: &BatchResult) -> usize {
    let failures: Vec<_> = results
        .iter()
        .filter_map(|(p, r)| r.as_ref().err().map(|e| (p, e)))
        .collect();
    if !failures.is_empty() {
        eprintln!("{} image(s) failed:", failures.len());
        for (p, e) in &failures {
            eprintln!("  {}: {e:#}", p.display());
        }
    }
    failures.len()
}

fn cmd_deidentify(args: DeidentifyArgs) -> anyhow::Result<ExitCode> {
    let config = resolve_config(&args.flags)?;
    let images = collect_images(&args.inputs)?;
    let results = run_batch(&images, &config, &args.output)?;
    for (_, r) in &results {
        if let Ok(o) = r {
            println!("{}: loss {:.6} -> {:.6}", o.name, o.initial_loss, o.final_loss);
        }
    }
    Ok(if report_failures(&results) == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn print_row(report: &MetricsReport) {
    println!("{}", COLUMNS.join("\t"));
    let row: Vec<String> = report.row().iter().map(|v| format!("{v:.3}")).collect();
    println!("{}", row.join("\t"));
}

fn write_outputs(report: &MetricsReport, json: Option<&Path>, csv: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = json {
        report.write_json(p)?;
    }
    if let Some(p) = csv {
        report.write_csv(p)?;
    }
    Ok(())
}

fn png_names(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    Ok(std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_png(p))
        .map(|p| (p.file_name().expect("file").to_string_lossy().into_owned(), p))
        .collect())
}

fn score_pair(
    x: &ImageTensor,
    y: &ImageTensor,
    name: &str,
    config: &RunConfig,
    registry: &ProviderRegistry,
) -> anyhow::Result<PairScores> {
    if x.shape() != y.shape() {
        bail!("{name}: original is {:?} but edited is {:?}", x.shape(), y.shape());
    }
    let schedule = config.schedule.build()?;
    let eval = registry.eval(&config.providers.eval, &config.adapter_settings(x.shape(), &schedule))?;
    let scores = evaluate_pair(x, y, eval.as_ref()).named(name);
    for e in &scores.errors {
        eprintln!("{name}: {e}");
    }
    Ok(scores)
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<ExitCode> {
    if let Some(spec) = &args.from_means {
        let values: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .context("--from-means expects six comma-separated numbers")?;
        let means: [f64; 6] = values
            .try_into()
            .map_err(|v: Vec<f64>| anyhow!("--from-means expects six values, got {}", v.len()))?;
        let report = MetricsReport::from_means(ColumnMeans::from_array(means))?;
        write_outputs(&report, args.output.as_deref(), args.csv.as_deref())?;
        print_row(&report);
        return Ok(ExitCode::SUCCESS);
    }

    let config = resolve_config(&args.flags)?;
    let (orig_dir, edit_dir) = (
        args.original.as_deref().expect("clap enforces --original"),
        args.edited.as_deref().expect("clap enforces --edited"),
    );
    let originals = png_names(orig_dir)?;
    let edited = png_names(edit_dir)?;
    let matched: Vec<&String> = originals.keys().filter(|k| edited.contains_key(*k)).collect();
    let unmatched = originals.len() + edited.len() - 2 * matched.len();
    if unmatched > 0 {
        eprintln!("skipped {unmatched} file(s) without a same-named partner");
    }
    if matched.is_empty() {
        bail!(
            "no file names appear in both {} and {}; pairs are matched by file name",
            orig_dir.display(),
            edit_dir.display()
        );
    }
    let registry = ProviderRegistry::with_defaults();
    let mut scores = Vec::with_capacity(matched.len());
    for name in matched {
        let x = ImageTensor::load_png(&originals[name])?;
        let y = ImageTensor::load_png(&edited[name])?;
        scores.push(score_pair(&x, &y, name, &config, &registry)?);
    }
    let report = aggregate(&scores)?;
    write_outputs(&report, args.output.as_deref(), args.csv.as_deref())?;
    print_row(&report);
    Ok(ExitCode::SUCCESS)
}

/// Settings an ablation can sweep.
pub const SWEEP_PARAMS: [&str; 8] = [
    "lr",
    "lambda",
    "n_opt",
    "denoise_steps",
    "init_norm",
    "lambda_id",
    "lambda_attr",
    "lambda_mask",
];

fn apply_sweep(config: &mut RunConfig, param: &str, value: &str) -> anyhow::Result<()> {
    let o = &mut config.optimization;
    let float = || {
        value
            .parse::<f64>()
            .with_context(|| format!("'{value}' is not a number"))
    };
    let int = || {
        value
            .parse::<usize>()
            .with_context(|| format!("'{value}' is not a whole number"))
    };
    match param {
        "lr" => o.lr = float()?,
        "lambda" => o.lambda = float()?,
        "n_opt" => o.n_opt = int()?,
        "denoise_steps" => o.window.n_denoise = int()?,
        "init_norm" => o.init_norm = float()?,
        "lambda_id" => o.weights.lambda_id = float()?,
        "lambda_attr" => o.weights.lambda_attr = float()?,
        "lambda_mask" => o.weights.lambda_mask = float()?,
        other => bail!("unknown sweep parameter '{other}'; valid: {}", SWEEP_PARAMS.join(", ")),
    }
    config.validate()?;
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<ExitCode> {
    let param = args.param.replace('-', "_");
    if !SWEEP_PARAMS.contains(&param.as_str()) {
        bail!(
            "unknown sweep parameter '{}'; valid: {}",
            args.param,
            SWEEP_PARAMS.join(", ")
        );
    }
    let values: Vec<&str> = args.values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        bail!("--values needs at least one value to sweep");
    }
    let base = resolve_config(&args.flags)?;
    let images = collect_images(&args.inputs)?;
    let cells: Vec<(String, RunConfig)> = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            apply_sweep(&mut c, &param, v)?;
            Ok((format!("{param}={v}"), c))
        })
        .collect::<anyhow::Result<_>>()?;

    std::fs::create_dir_all(&args.output).with_context(|| format!("cannot create {}", args.output.display()))?;
    let registry = ProviderRegistry::with_defaults();
    let mut reports = Vec::new();
    let mut failed = 0;
    for (label, config) in &cells {
        let dir = args.output.join(label);
        let results = run_batch(&images, config, &dir)?;
        failed += report_failures(&results);
        let scores: Vec<PairScores> = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|o| score_pair(&o.original, &o.edited, &o.name, config, &registry))
            .collect::<anyhow::Result<_>>()?;
        if scores.is_empty() {
            eprintln!("{label}: no successful images, no report");
            continue;
        }
        let report = aggregate(&scores)?;
        report.write_json(&dir.join("report.json"))?;
        reports.push((label.clone(), report));
    }
    let rows: Vec<(&str, &MetricsReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    write_table(&args.output.join("ablation.csv"), &rows, true)?;
    println!("label\t{}", COLUMNS.join("\t"));
    for (label, r) in &rows {
        let row: Vec<String> = r.row().iter().map(|v| format!("{v:.3}")).collect();
        println!("{label}\t{}", row.join("\t"));
    }
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_trajectory(args: TrajectoryArgs) -> anyhow::Result<ExitCode> {
    let trajectories: Vec<(String, Array2<f64>)> = args
        .snapshots
        .iter()
        .map(|p| Ok((stem(p), read_snapshot_file(p)?)))
        .collect::<anyhow::Result<_>>()?;
    let views: Vec<_> = trajectories.iter().map(|(_, t)| t.view()).collect();
    let pool = concatenate(Axis(0), &views).context("snapshot files have different latent dimensions")?;
    let pca = Pca::fit(&pool, args.k)?;

    let mut w =
        csv::Writer::from_path(&args.output).with_context(|| format!("cannot write {}", args.output.display()))?;
    let mut header = vec!["trajectory".to_string(), "step".to_string()];
    header.extend((1..=args.k).map(|i| format!("pc{i}")));
    w.write_record(&header)?;
    for (name, t) in &trajectories {
        for (step, row) in pca.project(t)?.rows().into_iter().enumerate() {
            let mut rec = vec![name.clone(), step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    println!(
        "projected {} vectors from {} trajectories; explained variance {:.4}",
        pool.nrows(),
        trajectories.len(),
        pca.explained_variance_ratio()
    );
    Ok(ExitCode::SUCCESS)
}
