use rand::Rng;
use serde::Serialize;

use super::model::{latent_loss_grad, LatentInstance};
use super::params::DenoiserParams;
use super::text::TEXT_DROP_RATE;
use super::{DenoiserError, NoiseSchedule};
use crate::rng::keyed_rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Timesteps are drawn uniformly from `[1, max_t]`.
    pub max_t: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-3,
            seed: 0,
            max_t: NoiseSchedule::default().max_level(),
        }
    }
}

/// Adam over every parameter on random (example, timestep) draws, dropping
/// captions at the training rate. Returns the per-step losses.
pub fn train_smoke(params: &mut DenoiserParams, data: &[LatentInstance], cfg: &TrainConfig) -> Result<Vec<f64>, DenoiserError> {
    if data.is_empty() {
        return Err(DenoiserError::ShapeMismatch("no training examples".into()));
    }
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
    let mut v = m.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = keyed_rng(cfg.seed, step as u64, "train/draw");
        let ex = &data[rng.gen_range(0..data.len())];
        let t = rng.gen_range(1..=cfg.max_t);
        let drop = rng.gen::<f64>() < TEXT_DROP_RATE;
        let inst = LatentInstance {
            text: ex.text.clone().with_drop(drop),
            ..ex.clone()
        };
        let r = latent_loss_grad(params, &inst, t, cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9), None)?;
        losses.push(r.loss);
        let k = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, k), 1.0 - f64::powi(b2, k));
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(&r.grads).enumerate() {
            for j in 0..p.data.len() {
                m[i][j] = b1 * m[i][j] + (1.0 - b1) * g.data[j];
                v[i][j] = b2 * v[i][j] + (1.0 - b2) * g.data[j] * g.data[j];
                p.data[j] -= cfg.lr * (m[i][j] / c1) / ((v[i][j] / c2).sqrt() + eps);
            }
        }
    }
    Ok(losses)
}
