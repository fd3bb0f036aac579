//! The `latent-deid` command line: `deidentify`, `evaluate`, `ablate` and
//! `trajectory`.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{collect_images, deidentify_image, DeidentifyOutcome};
pub use config::{ProviderNames, RunConfig, ScheduleConfig, CONFIG_ENV, RESOLVED_CONFIG_FILE};

use crate::optimizer::ModeKind;

#[derive(Debug, Parser)]
#[command(
    name = "latent-deid",
    version,
    about = "Face de-identification by latent direction optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize an identity-editing direction for each input image.
    Deidentify(DeidentifyArgs),
    /// Score edited images against their originals.
    Evaluate(EvaluateArgs),
    /// Sweep one setting and compare the resulting metrics.
    Ablate(AblateArgs),
    /// Project latent snapshots onto their principal components.
    Trajectory(TrajectoryArgs),
}

/// Flags that override configuration values. Long names mirror config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// TOML config file; falls back to $LATENT_DEID_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ModeKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "n-opt")]
    pub n_opt: Option<usize>,
    #[arg(long = "denoise-steps")]
    pub denoise_steps: Option<usize>,
    #[arg(long = "init-norm")]
    pub init_norm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lambda-id")]
    pub lambda_id: Option<f64>,
    #[arg(long = "lambda-attr")]
    pub lambda_attr: Option<f64>,
    #[arg(long = "lambda-mask")]
    pub lambda_mask: Option<f64>,
    /// Fix an attribute's target probability, e.g. "Smile=0.9". Repeatable.
    #[arg(long = "fix-attr")]
    pub fix_attr: Vec<String>,
    /// Store the edited latent of every step.
    #[arg(long)]
    pub snapshots: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub embedder: Option<String>,
    #[arg(long)]
    pub attributes: Option<String>,
    #[arg(long)]
    pub parser: Option<String>,
    #[arg(long)]
    pub eval: Option<String>,
}

fn parse_mode(s: &str) -> Result<ModeKind, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct DeidentifyArgs {
    /// PNG files or directories of PNG files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of original images.
    #[arg(long, required_unless_present = "from_means")]
    pub original: Option<PathBuf>,
    /// Directory of edited images, paired with originals by file name.
    #[arg(long, required_unless_present = "from_means")]
    pub edited: Option<PathBuf>,
    /// Report-only mode: six comma-separated column means
    /// (SID, Detect, Emotion, Gender, Pose, Gaze).
    #[arg(long = "from-means", conflicts_with_all = ["original", "edited"])]
    pub from_means: Option<String>,
    /// JSON report path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Aggregate row as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    /// One of: lr, lambda, n_opt, denoise_steps, init_norm, lambda_id, lambda_attr, lambda_mask.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values to sweep.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Latent snapshot files written by `deidentify --snapshots`.
    #[arg(required = true)]
    pub snapshots: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Parses `args` and runs the selected command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn main() -> ExitCode {
    run_from(std::env::args_os())
}
