//! Command-line front end: argument parsing and the subcommands that tie the pipeline together.

mod commands;

use std::ffi::OsString;

use clap::{Args, Parser, Subcommand};
use splatmo::Error;

pub use commands::{blur_score_csv, blur_score_rows, BlurRow};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad input, bad files and unknown flags.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for numerical breakdown and failed gradient checks.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "splatmo", version, about = "Motion-blur and rolling-shutter aware Gaussian splatting toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Optimize a scene and trajectory against a dataset.
    Train(TrainArgs),
    /// Render every frame of a scene and trajectory.
    Render(RenderArgs),
    /// Score evaluation frames of a checkpoint.
    Eval(EvalArgs),
    /// Per-frame blur scores, keyframe selection and evaluation split.
    BlurScore(BlurScoreArgs),
    /// Finite-difference check of every gradient block on a random toy problem.
    FdCheck(FdCheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with simulation settings; flags below override it.
    #[arg(long)]
    pub spec: Option<std::path::PathBuf>,
    #[arg(long)]
    pub recipe: Option<splatmo::simkit::Recipe>,
    #[arg(long)]
    pub variant: Option<splatmo::simkit::Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trajectory: Option<splatmo::simkit::TrajectoryKind>,
    #[arg(long)]
    pub speed: Option<f64>,
    #[arg(long)]
    pub exposure: Option<f64>,
    #[arg(long)]
    pub readout: Option<f64>,
    #[arg(long)]
    pub n_splats: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Noise the initial pose and velocity estimates of any variant.
    #[arg(long)]
    pub init_noise: bool,
    /// Output dataset directory.
    #[arg(short, long)]
    pub out: std::path::PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON.
    #[arg(short, long)]
    pub config: Option<std::path::PathBuf>,
    /// Dataset directory.
    #[arg(short, long)]
    pub input: Option<std::path::PathBuf>,
    /// Output directory for metrics, checkpoints and renders.
    #[arg(short, long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene JSON.
    #[arg(long)]
    pub scene: std::path::PathBuf,
    /// Trajectory JSON with intrinsics and per-frame motion.
    #[arg(long)]
    pub trajectory: std::path::PathBuf,
    /// Run configuration supplying render settings and ablation flags.
    #[arg(short, long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(short, long)]
    pub out: std::path::PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: std::path::PathBuf,
    /// Dataset the checkpoint was trained on.
    #[arg(short, long)]
    pub input: std::path::PathBuf,
    #[arg(short, long)]
    pub config: Option<std::path::PathBuf>,
    /// Register evaluation poses and velocities against the frozen scene before scoring.
    #[arg(long)]
    pub fixed_gaussians: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Directory for metrics and renders; without it metrics go to stdout.
    #[arg(short, long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlurScoreArgs {
    /// Dataset directory; its scene means serve as landmarks.
    #[arg(short, long)]
    pub input: std::path::PathBuf,
    /// Score the true trajectory instead of the initial estimates.
    #[arg(long)]
    pub truth: bool,
    /// CSV output path; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct FdCheckArgs {
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub splats: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub n_blur: usize,
    /// Check one block only (mu, q, s, alpha, sh, p, rot, v, w).
    #[arg(long)]
    pub block: Option<splatmo::gradients::ParamBlock>,
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// Parse `argv` (program name first) and run the chosen subcommand.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
