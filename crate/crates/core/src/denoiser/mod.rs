//! Toy-scale view-consistent denoiser: pose-aware encoder, zero-initialized
//! control branch, view-consistent blocks, the diffusion objective, and a
//! DDIM sampler with classifier-free guidance and noise-level control.

mod model;
mod params;
mod sampler;
mod schedule;
mod text;
mod train;

pub use model::{
    diffusion_noise, forward_denoise, latent_loss_grad, mv_diffusion_loss, mv_diffusion_loss_with, noisy_latent,
    pose_encoder, pose_input, timestep_features, DenoiseContext, LatentInstance, LossGrad, NoisePredictor,
    ViewGeometry,
};
pub use params::{Bound, DenoiserConfig, DenoiserParams, PATCH, POOL, POSE_INPUT_CHANNELS, POSE_LADDER};
pub use sampler::{
    ddim_enhance, ddim_enhance_with, ddim_sample, ddim_timesteps, decode_latent, encode_latent, start_latent,
    DdimSettings, HasTextWidth, DEFAULT_CFG_SCALE, DEFAULT_DDIM_STEPS,
};
pub use schedule::{NoiseSchedule, BETA_END, BETA_START, DEFAULT_STEPS};
pub use text::{TextCondition, TEXT_DROP_RATE};
pub use train::{train_smoke, TrainConfig};

use thiserror::Error;

use crate::epiagg::AggregationError;
use crate::featops::FeatureError;
use crate::mvgeom::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("noise level {delta} outside [0, {max}]")]
    InvalidNoiseLevel { delta: usize, max: usize },
    #[error("sampler needs at least one step, got {0}")]
    InvalidSteps(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}
