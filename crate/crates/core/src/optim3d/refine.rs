use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::perceptual::{l1_loss_grad, perceptual_proxy_grad};
use super::render::{render_backward, render_with, RenderSettings, SceneGrad};
use super::{Optim3dError, VoxelScene};
use crate::degrade::MultiViewBatch;
use crate::image::Image;
use crate::metrics::psnr;
use crate::mvgeom::CameraPose;
use crate::rng::keyed_rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineConfig {
    pub steps: usize,
    /// Weight of the perceptual proxy next to L1.
    pub lambda: f64,
    pub lr: f64,
    /// Extra learning-rate factor for densities, whose natural scale is
    /// much larger than that of colors.
    pub density_lr_scale: f64,
    /// Views per step; the full set when `0` or larger than the set.
    pub batch_views: usize,
    /// Steps per plateau window; the lr halves when a window's mean loss
    /// fails to improve on the previous one.
    pub plateau_window: usize,
    pub render: RenderSettings,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lambda: 0.5,
            lr: 1e-2,
            density_lr_scale: 1.0,
            batch_views: 4,
            plateau_window: 100,
            render: RenderSettings::default(),
            seed: 0,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RefineReport {
    /// Mean per-view loss of each step's minibatch.
    pub losses: Vec<f64>,
    /// Learning rate in effect at each step.
    pub lrs: Vec<f64>,
    /// `(step, mean PSNR)` on the evaluation views.
    pub eval_psnr: Vec<(usize, f64)>,
}

/// `L1 + λ·proxy` for one view, with the gradient on the scene.
pub fn view_loss(
    scene: &VoxelScene,
    pose: &CameraPose,
    target: &Image,
    lambda: f64,
    settings: RenderSettings,
    with_grad: bool,
) -> Result<(f64, Option<SceneGrad>), Optim3dError> {
    let (img, _) = render_with(scene, pose, target.height, target.width, settings);
    let (l1, mut g) = l1_loss_grad(&img, target)?;
    let mut loss = l1;
    if lambda != 0.0 {
        let (p, gp) = perceptual_proxy_grad(&img, target)?;
        loss += lambda * p;
        g.iter_mut().zip(&gp).for_each(|(a, b)| *a += lambda * b);
    }
    let grad = with_grad.then(|| render_backward(scene, pose, target.height, target.width, settings, &g));
    Ok((loss, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn mean_psnr(scene: &VoxelScene, eval: &MultiViewBatch, settings: RenderSettings) -> f64 {
    let vals: Vec<f64> = eval
        .images
        .par_iter()
        .zip(&eval.poses)
        .map(|(t, p)| {
            let (img, _) = render_with(scene, p, t.height, t.width, settings);
            psnr(&img, t).expect("same shape")
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

pub fn refine(scene: &VoxelScene, targets: &MultiViewBatch, cfg: &RefineConfig) -> Result<(VoxelScene, RefineReport), Optim3dError> {
    refine_with_eval(scene, targets, cfg, None)
}

/// Adam on `Σ_v L1 + λ·proxy` over minibatches of target views, clamping
/// after every step. Views are visited in a seeded per-epoch order and
/// gradients are summed in view order.
pub fn refine_with_eval(
    scene: &VoxelScene,
    targets: &MultiViewBatch,
    cfg: &RefineConfig,
    eval: Option<&MultiViewBatch>,
) -> Result<(VoxelScene, RefineReport), Optim3dError> {
    scene.validate()?;
    if targets.images.is_empty() || targets.images.len() != targets.poses.len() {
        return Err(Optim3dError::ShapeMismatch("targets need matching images and poses".into()));
    }
    if !(cfg.lr > 0.0) || cfg.lambda < 0.0 {
        return Err(Optim3dError::InvalidArgument("lr must be positive and lambda non-negative".into()));
    }
    let n = targets.images.len();
    let bs = if cfg.batch_views == 0 { n } else { cfg.batch_views.min(n) };
    let mut out = scene.clone();
    let mut report = RefineReport::default();
    let mut adam_d = Adam::new(out.density.len());
    let mut adam_c = Adam::new(out.color.len());
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut prev_window: Option<f64> = None;
    if let (Some(ev), true) = (eval, cfg.eval_every > 0) {
        report.eval_psnr.push((0, mean_psnr(&out, ev, cfg.render)));
    }
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == order.len() {
                order = (0..n).collect();
                order.shuffle(&mut keyed_rng(cfg.seed, epoch, "refine/order"));
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        batch.sort_unstable();
        let results: Vec<(f64, Option<SceneGrad>)> = batch
            .par_iter()
            .map(|&v| view_loss(&out, &targets.poses[v], &targets.images[v], cfg.lambda, cfg.render, true))
            .collect::<Result<_, _>>()?;
        let mut grad = SceneGrad::zeros(&out);
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grad.add(g.as_ref().expect("gradient requested"));
        }
        loss /= bs as f64;
        report.losses.push(loss);
        report.lrs.push(lr);
        adam_d.step(&mut out.density, &grad.density, lr * cfg.density_lr_scale);
        adam_c.step(&mut out.color, &grad.color, lr);
        out.clamp();
        let done = step + 1;
        if cfg.plateau_window > 0 && done % cfg.plateau_window == 0 {
            let w = &report.losses[done - cfg.plateau_window..done];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            if prev_window.is_some_and(|p| mean >= p) {
                lr *= 0.5;
            }
            prev_window = Some(mean);
        }
        if let (Some(ev), true) = (eval, cfg.eval_every > 0 && done % cfg.eval_every.max(1) == 0) {
            report.eval_psnr.push((done, mean_psnr(&out, ev, cfg.render)));
        }
    }
    Ok((out, report))
}
