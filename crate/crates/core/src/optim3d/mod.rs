//! Voxel scene, differentiable renderer, orbit trajectories and the
//! per-instance refinement loop.

mod io;
mod orbit;
mod perceptual;
mod refine;
mod render;
mod scene;

pub use io::{read_scene, write_scene, SCENE_MAGIC, SCENE_VERSION};
pub use orbit::{orbit_sampler, orbit_sampler_with, OrbitTrajectory};
pub use perceptual::{l1_loss_grad, perceptual_proxy, perceptual_proxy_grad, PYRAMID_LEVELS};
pub use refine::{refine, refine_with_eval, view_loss, RefineConfig, RefineReport};
pub use render::{render, render_backward, render_with, RenderSettings, SceneGrad, BACKGROUND};
pub use scene::VoxelScene;

use thiserror::Error;

use crate::mvgeom::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Optim3dError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed scene file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
