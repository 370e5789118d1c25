pub mod autodiff;
pub mod datasetio;
pub mod degrade;
pub mod demo;
pub mod denoiser;
pub mod epiagg;
pub mod featops;
pub mod image;
pub mod metrics;
pub mod mvgeom;
pub mod optim3d;
pub mod rng;
pub mod rowattn;
