//! Desk-scale refinement benchmark and the end-to-end demo pipeline.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::datasetio::{make_toy_scene, toy_voxels, ToySceneKind, TOY_FOV_DEG, TOY_RADIUS};
use crate::degrade::{degrade_batch, DegradationConfig, DegradeError, MultiViewBatch};
use crate::denoiser::{ddim_enhance, DdimSettings, DenoiserConfig, DenoiserError, DenoiserParams};
use crate::image::{Image, Mask};
use crate::metrics::{psnr, wavelet_color_fix, MetricsError, DEFAULT_WAVELET_LEVELS};
use crate::mvgeom::Intrinsics;
use crate::optim3d::{
    orbit_sampler, orbit_sampler_with, refine_with_eval, render_with, Optim3dError, OrbitTrajectory, RefineConfig,
    RefineReport, VoxelScene,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineBenchConfig {
    pub kind: ToySceneKind,
    pub seed: u64,
    /// Side of the square refine / eval renders.
    pub size: usize,
    pub refine_views: usize,
    pub refine_elevation_deg: f64,
    pub eval_views: usize,
    pub eval_elevation_deg: f64,
    pub refine: RefineConfig,
}

impl Default for RefineBenchConfig {
    fn default() -> Self {
        Self {
            kind: ToySceneKind::CheckerCube,
            seed: 0,
            size: 32,
            refine_views: 100,
            refine_elevation_deg: 15.0,
            eval_views: 12,
            eval_elevation_deg: 8.0,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineBenchResult {
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub report: RefineReport,
    pub seconds: f64,
    #[serde(skip)]
    pub refined: VoxelScene,
}

impl RefineBenchResult {
    pub fn gain(&self) -> f64 {
        self.psnr_after - self.psnr_before
    }
}

/// Renders every pose of a trajectory.
pub fn render_trajectory(scene: &VoxelScene, traj: &OrbitTrajectory, size: usize, cfg: &RefineConfig) -> MultiViewBatch {
    let images: Vec<Image> = traj
        .poses
        .par_iter()
        .map(|p| render_with(scene, p, size, size, cfg.render).0)
        .collect();
    MultiViewBatch {
        masks: vec![Mask::full(size, size, true); images.len()],
        images,
        poses: traj.poses.clone(),
        text: None,
        noise_level: 0,
    }
}

pub fn mean_psnr(scene: &VoxelScene, eval: &MultiViewBatch, cfg: &RefineConfig) -> f64 {
    let vals: Vec<f64> = eval
        .images
        .par_iter()
        .zip(&eval.poses)
        .map(|(t, p)| psnr(&render_with(scene, p, t.height, t.width, cfg.render).0, t).expect("same shape"))
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Refine and held-out eval trajectories; the eval orbit sits at its own
/// elevation with azimuths offset by half a step.
pub fn bench_trajectories(cfg: &RefineBenchConfig) -> Result<(OrbitTrajectory, OrbitTrajectory), Optim3dError> {
    let intr = Intrinsics::from_fov(cfg.size, cfg.size, TOY_FOV_DEG);
    let refine = orbit_sampler(cfg.refine_views, cfg.refine_elevation_deg.to_radians(), TOY_RADIUS, intr)?;
    let phase = std::f64::consts::PI / cfg.eval_views as f64;
    let eval = orbit_sampler_with(cfg.eval_views, cfg.eval_elevation_deg.to_radians(), TOY_RADIUS, phase, [0.0; 3], intr)?;
    Ok((refine, eval))
}

/// Refines the coarse init of a toy scene against clean renders on the
/// refine orbit and scores both scenes on the held-out orbit.
pub fn refinement_benchmark(cfg: &RefineBenchConfig) -> Result<RefineBenchResult, Optim3dError> {
    refinement_benchmark_with_targets(cfg, None)
}

/// As [`refinement_benchmark`]; `targets` replaces the clean refine-orbit renders.
pub fn refinement_benchmark_with_targets(
    cfg: &RefineBenchConfig,
    targets: Option<&MultiViewBatch>,
) -> Result<RefineBenchResult, Optim3dError> {
    let start = Instant::now();
    let truth = toy_voxels(cfg.kind, cfg.seed);
    let init = truth.coarse_init(cfg.seed);
    let (refine_traj, eval_traj) = bench_trajectories(cfg)?;
    let clean = render_trajectory(&truth, &refine_traj, cfg.size, &cfg.refine);
    let eval = render_trajectory(&truth, &eval_traj, cfg.size, &cfg.refine);
    let psnr_before = mean_psnr(&init, &eval, &cfg.refine);
    let (refined, report) = refine_with_eval(&init, targets.unwrap_or(&clean), &cfg.refine, Some(&eval))?;
    let psnr_after = mean_psnr(&refined, &eval, &cfg.refine);
    Ok(RefineBenchResult {
        psnr_before,
        psnr_after,
        report,
        seconds: start.elapsed().as_secs_f64(),
        refined,
    })
}

/// The bundled toy input views for a demo run.
pub fn demo_inputs(kind: ToySceneKind, seed: u64) -> MultiViewBatch {
    make_toy_scene(kind, seed).1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoConfig {
    pub kind: ToySceneKind,
    pub seed: u64,
    pub ddim: DdimSettings,
    pub bench: RefineBenchConfig,
}

impl DemoConfig {
    pub fn new(seed: u64) -> Self {
        let mut bench = RefineBenchConfig {
            seed,
            ..RefineBenchConfig::default()
        };
        bench.refine.steps = 500;
        bench.refine.seed = seed;
        Self {
            kind: ToySceneKind::CheckerCube,
            seed,
            ddim: DdimSettings {
                seed,
                ..DdimSettings::default()
            },
            bench,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    /// Mean input-view PSNR of the degraded views against the clean ones.
    pub lq_psnr: f64,
    /// Same for the enhanced, color-fixed views.
    pub enhanced_psnr: f64,
    pub degradation_ops: Vec<String>,
    pub refine_psnr_before: f64,
    pub refine_psnr_after: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub hq: MultiViewBatch,
    #[serde(skip)]
    pub lq: MultiViewBatch,
    #[serde(skip)]
    pub enhanced: MultiViewBatch,
    #[serde(skip)]
    pub refined: VoxelScene,
    #[serde(skip)]
    pub losses: Vec<f64>,
}

impl DemoReport {
    pub fn refine_gain(&self) -> f64 {
        self.refine_psnr_after - self.refine_psnr_before
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Optim(#[from] Optim3dError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn batch_psnr(a: &MultiViewBatch, b: &MultiViewBatch) -> Result<f64, MetricsError> {
    let mut s = 0.0;
    for (x, y) in a.images.iter().zip(&b.images) {
        s += psnr(x, y)?;
    }
    Ok(s / a.len() as f64)
}

/// Toy scene → degradation → toy enhancement with wavelet color fix →
/// refinement of the coarse init on the refine orbit → held-out PSNR.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, DemoError> {
    let start = Instant::now();
    let (_, hq) = make_toy_scene(cfg.kind, cfg.seed);
    let (lq, rec) = degrade_batch(&hq, &DegradationConfig::default(), cfg.seed)?;
    let params = DenoiserParams::init(DenoiserConfig::default(), cfg.seed)?;
    let mut enhanced = ddim_enhance(&lq, &params, &cfg.ddim)?;
    for (img, reference) in enhanced.images.iter_mut().zip(&lq.images) {
        *img = wavelet_color_fix(img, reference, DEFAULT_WAVELET_LEVELS)?;
    }
    let bench = refinement_benchmark(&cfg.bench)?;
    Ok(DemoReport {
        config: cfg.clone(),
        lq_psnr: batch_psnr(&lq, &hq)?,
        enhanced_psnr: batch_psnr(&enhanced, &hq)?,
        degradation_ops: rec.entries.iter().map(|e| format!("{:?}:{}", e.view, e.op)).collect(),
        refine_psnr_before: bench.psnr_before,
        refine_psnr_after: bench.psnr_after,
        seconds: start.elapsed().as_secs_f64(),
        hq,
        lq,
        enhanced,
        refined: bench.refined,
        losses: bench.report.losses,
    })
}
