//! Probabilistic degradation stages behind a common trait, looked up by name.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::color::{apply_color_shift, apply_translucent, ColorShiftParams, TranslucentParams};
use super::filters::{add_gaussian_noise, gaussian_blur, resize_round_trip, sinc_filter};
use super::jpeg::jpeg_round_trip;
use super::warp::{random_grid_offsets, warp_with_offsets};
use super::{DegradationConfig, DegradeError};
use crate::image::{Image, Mask};
use crate::mvgeom::CameraPose;
use crate::rng::keyed_rng;

/// What a stage may modify for one view.
pub struct StageContext<'a> {
    pub image: &'a mut Image,
    pub pose: &'a mut CameraPose,
    /// Object mask before dilation.
    pub mask: &'a Mask,
}

pub trait DegradationStage: Send + Sync {
    fn name(&self) -> &'static str;

    /// Probability that the stage fires for a view.
    fn probability(&self, cfg: &DegradationConfig) -> f64;

    /// Draws the stage parameters. `view_key` seeds any per-view random
    /// field (noise samples) that must differ between views even when the
    /// parameters are shared.
    fn sample(&self, cfg: &DegradationConfig, width: usize, height: usize, mask: &Mask, rng: &mut ChaCha8Rng, view_key: u64) -> Value;

    fn apply(&self, ctx: &mut StageContext<'_>, params: &Value) -> Result<(), DegradeError>;

    /// Whether background pixels are reset to white rather than restored.
    fn full_frame(&self) -> bool {
        false
    }
}

fn field<T: for<'de> Deserialize<'de>>(params: &Value, key: &str) -> Result<T, DegradeError> {
    let v = params
        .get(key)
        .ok_or_else(|| DegradeError::InvalidParams(format!("missing '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| DegradeError::InvalidParams(format!("'{key}': {e}")))
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

struct Blur {
    name: &'static str,
    first: bool,
}

impl DegradationStage for Blur {
    fn name(&self) -> &'static str {
        self.name
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        if self.first {
            cfg.first_blur_prob
        } else {
            cfg.second_blur_prob
        }
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        let k = *cfg.blur_kernel_sizes.choose(rng).expect("validated non-empty");
        json!({"kernel_size": k, "sigma": uniform(rng, cfg.blur_sigma)})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        *ctx.image = gaussian_blur(ctx.image, field(p, "kernel_size")?, field(p, "sigma")?)?;
        Ok(())
    }
}

struct Resize;

impl DegradationStage for Resize {
    fn name(&self) -> &'static str {
        "resize"
    }
    fn probability(&self, _: &DegradationConfig) -> f64 {
        1.0
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        json!({"scale": uniform(rng, cfg.resize_range)})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        *ctx.image = resize_round_trip(ctx.image, field(p, "scale")?);
        Ok(())
    }
    fn full_frame(&self) -> bool {
        true
    }
}

struct Noise;

impl DegradationStage for Noise {
    fn name(&self) -> &'static str {
        "noise"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.noise_prob
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, view_key: u64) -> Value {
        json!({"sigma": uniform(rng, cfg.noise_sigma_range), "field_key": view_key})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        *ctx.image = add_gaussian_noise(ctx.image, field(p, "sigma")?, field(p, "field_key")?);
        Ok(())
    }
}

struct Jpeg;

impl DegradationStage for Jpeg {
    fn name(&self) -> &'static str {
        "jpeg"
    }
    fn probability(&self, _: &DegradationConfig) -> f64 {
        1.0
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        json!({"quality": rng.gen_range(cfg.jpeg_quality[0]..=cfg.jpeg_quality[1])})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        *ctx.image = jpeg_round_trip(ctx.image, field(p, "quality")?);
        Ok(())
    }
}

struct Sinc;

impl DegradationStage for Sinc {
    fn name(&self) -> &'static str {
        "sinc"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.sinc_prob
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        let k = *cfg.blur_kernel_sizes.choose(rng).expect("validated non-empty");
        json!({"kernel_size": k, "cutoff": uniform(rng, cfg.sinc_cutoff_range)})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        *ctx.image = sinc_filter(ctx.image, field(p, "kernel_size")?, field(p, "cutoff")?)?;
        Ok(())
    }
}

struct GridDistortion;

impl DegradationStage for GridDistortion {
    fn name(&self) -> &'static str {
        "grid_distortion"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.grid_distortion_prob
    }
    fn sample(&self, cfg: &DegradationConfig, w: usize, h: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        let strength = uniform(rng, cfg.grid_distortion_strength);
        let offsets = random_grid_offsets(w, h, strength, rng);
        json!({"strength": strength, "offsets": offsets})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        let offsets: Vec<[f64; 2]> = field(p, "offsets")?;
        if offsets.len() != (super::GRID_CELLS + 1).pow(2) {
            return Err(DegradeError::InvalidParams("wrong control grid size".into()));
        }
        *ctx.image = warp_with_offsets(ctx.image, &offsets);
        Ok(())
    }
}

struct ColorShift;

impl DegradationStage for ColorShift {
    fn name(&self) -> &'static str {
        "color_shift"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.color_shift_prob
    }
    fn sample(&self, _: &DegradationConfig, w: usize, h: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        serde_json::to_value(ColorShiftParams::sample(w, h, rng)).expect("serializable")
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        let params: ColorShiftParams =
            serde_json::from_value(p.clone()).map_err(|e| DegradeError::InvalidParams(e.to_string()))?;
        *ctx.image = apply_color_shift(ctx.image, ctx.mask, &params);
        Ok(())
    }
}

struct Translucent;

impl DegradationStage for Translucent {
    fn name(&self) -> &'static str {
        "translucent_mask"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.translucent_mask_prob
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, mask: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        let alpha = uniform(rng, cfg.translucent_alpha);
        serde_json::to_value(TranslucentParams::sample(mask, alpha, rng)).expect("serializable")
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        let params: TranslucentParams =
            serde_json::from_value(p.clone()).map_err(|e| DegradeError::InvalidParams(e.to_string()))?;
        *ctx.image = apply_translucent(ctx.image, ctx.mask, &params);
        Ok(())
    }
}

/// Orbit perturbation: azimuth/elevation offsets in radians, relative radius change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub d_azimuth: f64,
    pub d_elevation: f64,
    pub d_radius: f64,
}

impl JitterParams {
    pub fn sample(strength: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut u = || if strength > 0.0 { rng.gen_range(-strength..=strength) } else { 0.0 };
        Self {
            d_azimuth: u(),
            d_elevation: u(),
            d_radius: u(),
        }
    }

    pub fn apply(&self, pose: &CameraPose) -> Result<CameraPose, DegradeError> {
        if self.d_azimuth == 0.0 && self.d_elevation == 0.0 && self.d_radius == 0.0 {
            return Ok(pose.clone());
        }
        let mut o = pose.orbit_params();
        o.azimuth += self.d_azimuth;
        o.elevation = (o.elevation + self.d_elevation).clamp(-1.5, 1.5);
        o.radius *= 1.0 + self.d_radius;
        CameraPose::orbit(pose.intrinsics(), &o).map_err(|e| DegradeError::InvalidParams(e.to_string()))
    }
}

/// Perturbs the conditioning pose along its orbit; the image is untouched.
pub fn camera_jitter(pose: &CameraPose, strength: f64, seed: u64) -> Result<CameraPose, DegradeError> {
    let mut rng = keyed_rng(seed, 0, "camera_jitter");
    JitterParams::sample(strength, &mut rng).apply(pose)
}

struct CameraJitter;

impl DegradationStage for CameraJitter {
    fn name(&self) -> &'static str {
        "camera_jitter"
    }
    fn probability(&self, cfg: &DegradationConfig) -> f64 {
        cfg.camera_jitter_prob
    }
    fn sample(&self, cfg: &DegradationConfig, _: usize, _: usize, _: &Mask, rng: &mut ChaCha8Rng, _: u64) -> Value {
        let s = uniform(rng, cfg.camera_jitter_strength);
        let p = JitterParams::sample(s, rng);
        json!({"strength": s, "d_azimuth": p.d_azimuth, "d_elevation": p.d_elevation, "d_radius": p.d_radius})
    }
    fn apply(&self, ctx: &mut StageContext<'_>, p: &Value) -> Result<(), DegradeError> {
        let j = JitterParams {
            d_azimuth: field(p, "d_azimuth")?,
            d_elevation: field(p, "d_elevation")?,
            d_radius: field(p, "d_radius")?,
        };
        *ctx.pose = j.apply(ctx.pose)?;
        Ok(())
    }
}

/// Ordered stage list; lookups by name serve record replay.
pub struct StageRegistry {
    stages: Vec<Box<dyn DegradationStage>>,
}

impl Default for StageRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl StageRegistry {
    pub fn empty() -> Self {
        Self { stages: Vec::new() }
    }

    /// Texture deformation, the second-order chain (blur, resize, noise,
    /// JPEG, second blur, sinc), color shift, translucent overlay, and
    /// camera jitter, in that order.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(GridDistortion));
        r.register(Box::new(Blur {
            name: "first_blur",
            first: true,
        }));
        r.register(Box::new(Resize));
        r.register(Box::new(Noise));
        r.register(Box::new(Jpeg));
        r.register(Box::new(Blur {
            name: "second_blur",
            first: false,
        }));
        r.register(Box::new(Sinc));
        r.register(Box::new(ColorShift));
        r.register(Box::new(Translucent));
        r.register(Box::new(CameraJitter));
        r
    }

    /// Appends a stage, replacing any existing stage of the same name in place.
    pub fn register(&mut self, stage: Box<dyn DegradationStage>) {
        match self.stages.iter().position(|s| s.name() == stage.name()) {
            Some(i) => self.stages[i] = stage,
            None => self.stages.push(stage),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn DegradationStage> {
        self.stages.iter().find(|s| s.name() == name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn DegradationStage> {
        self.stages.iter().map(|s| s.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvgeom::{Intrinsics, OrbitParams};

    fn pose() -> CameraPose {
        CameraPose::orbit(
            Intrinsics::from_fov(32, 32, 40.0),
            &OrbitParams {
                azimuth: 1.0,
                elevation: 0.2,
                radius: 2.5,
                target: [0.0; 3],
            },
        )
        .unwrap()
    }

    #[test]
    fn standard_order() {
        assert_eq!(
            StageRegistry::standard().names(),
            vec![
                "grid_distortion",
                "first_blur",
                "resize",
                "noise",
                "jpeg",
                "second_blur",
                "sinc",
                "color_shift",
                "translucent_mask",
                "camera_jitter"
            ]
        );
    }

    #[test]
    fn jitter_zero_strength_and_bounds() {
        let p = pose();
        assert_eq!(camera_jitter(&p, 0.0, 3).unwrap(), p);
        for seed in 0..50 {
            let s = 0.1;
            let q = camera_jitter(&p, s, seed).unwrap();
            assert!((q.rotation.determinant() - 1.0).abs() < 1e-9);
            let r = 2.5;
            assert!((q.center - p.center).norm() <= r * s + 2.0 * s * r + 1e-12);
        }
    }
}
