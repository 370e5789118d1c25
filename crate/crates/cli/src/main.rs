mod commands;
mod snapshot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mvenhance::datasetio::ToySceneKind;

/// Multi-view enhancement toolkit: degradation synthesis, epipolar
/// debugging, toy diffusion enhancement, voxel refinement and metrics.
#[derive(Parser, Debug, Serialize)]
#[command(name = "mvenhance", version)]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses the hardware count. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write one of the bundled toy scenes as a dataset directory.
    Toy(ToyArgs),
    /// Synthesize LQ views with a degradation record and frequency stats.
    Augment(AugmentArgs),
    /// Correspondence overlays and a match/weight report for ring neighbours.
    Epipolar(EpipolarArgs),
    /// Toy DDIM enhancement of a dataset.
    Enhance(EnhanceArgs),
    /// Refine a voxel scene against target views.
    Optimize(OptimizeArgs),
    /// Per-view and mean PSNR/SSIM between two datasets.
    Eval(EvalArgs),
    /// Toy scene → degrade → enhance → refine, with before/after PSNR.
    Demo(DemoArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ToyArgs {
    #[arg(long, default_value = "checker-cube")]
    pub kind: ToySceneKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth voxel scene as scene.mvvx.
    #[arg(long)]
    pub with_scene: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct AugmentArgs {
    /// Dataset directory (view_###.png, cameras.json, optional masks and caption).
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file using the degradation config field names; missing fields keep defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra seeded runs used only for stats.json.
    #[arg(long, default_value_t = 200)]
    pub stats_trials: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EpipolarArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Token grid side used for matching.
    #[arg(long, default_value_t = 16)]
    pub tokens: usize,
    /// Band half-width in token units.
    #[arg(long, default_value_t = mvenhance::epiagg::DEFAULT_EPS)]
    pub eps: f64,
    /// Source tokens drawn per overlay.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EnhanceArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub noise_level: usize,
    #[arg(long, default_value_t = mvenhance::denoiser::DEFAULT_DDIM_STEPS)]
    pub steps: usize,
    #[arg(long = "cfg", default_value_t = mvenhance::denoiser::DEFAULT_CFG_SCALE)]
    pub cfg_scale: f64,
    /// Caption; defaults to the dataset's caption.txt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Restore the input's low frequencies after sampling.
    #[arg(long)]
    pub color_fix: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    /// Initial scene file; omitted with --toy.
    #[arg(long, required_unless_present = "toy")]
    pub scene: Option<PathBuf>,
    /// Target dataset directory; omitted with --toy.
    #[arg(long, required_unless_present = "toy")]
    pub targets: Option<PathBuf>,
    /// Held-out dataset scored during refinement.
    #[arg(long)]
    pub eval_orbit: Option<PathBuf>,
    /// Run the bundled benchmark: coarse init, clean refine orbit, held-out eval orbit.
    #[arg(long, conflicts_with_all = ["scene", "targets", "eval_orbit"])]
    pub toy: Option<ToySceneKind>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Steps between eval passes; 0 means once per epoch over the targets.
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Wavelet color fix of each prediction against its ground truth before scoring.
    #[arg(long)]
    pub color_fix: bool,
    /// CSV destination; printed to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DemoArgs {
    #[arg(long, default_value = "checker-cube")]
    pub kind: ToySceneKind,
    /// Refinement steps.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Directory for images, scene and report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
