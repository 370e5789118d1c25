//! Multi-view LQ–HQ degradation: individual operators, a registry of
//! probabilistic stages, and a seeded, replayable pipeline.

mod color;
mod filters;
mod jpeg;
mod pipeline;
mod stages;
mod warp;

pub use color::{
    apply_color_shift, apply_translucent, color_shift, hsv_to_rgb, rgb_to_hsv, translucent_mask,
    ColorShiftParams, RectShift, TranslucentParams, TRANSLUCENT_GRAY,
};
pub use filters::{
    add_gaussian_noise, gaussian_blur, gaussian_kernel_1d, resize_bilinear, resize_round_trip,
    sinc_filter, sinc_kernel,
};
pub use jpeg::{jpeg_round_trip, quant_tables};
pub use pipeline::{
    degrade_batch, degrade_batch_with, noise_level_augment, noise_level_augment_with_draw,
    replay, replay_with, DegradationRecord, FrequencyStats, RecordEntry,
};
pub use stages::{camera_jitter, DegradationStage, JitterParams, StageContext, StageRegistry};
pub use warp::{grid_distortion, random_grid_offsets, warp_with_offsets, GRID_CELLS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, Mask};
use crate::mvgeom::CameraPose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegradeError {
    #[error("invalid degradation config: {0}")]
    InvalidConfig(String),
    #[error("invalid blur kernel: {0}")]
    InvalidKernel(String),
    #[error("noise level {delta} outside [0, {max}]")]
    InvalidNoiseLevel { delta: usize, max: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("unknown degradation stage '{0}'")]
    UnknownStage(String),
    #[error("malformed degradation record: {0}")]
    MalformedRecord(String),
    #[error("invalid stage parameters: {0}")]
    InvalidParams(String),
}

/// Posed multi-view images with object masks, optional caption, and noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewBatch {
    pub images: Vec<Image>,
    pub poses: Vec<CameraPose>,
    pub masks: Vec<Mask>,
    pub text: Option<String>,
    pub noise_level: usize,
}

impl MultiViewBatch {
    pub fn new(images: Vec<Image>, poses: Vec<CameraPose>, masks: Vec<Mask>) -> Result<Self, DegradeError> {
        let b = Self {
            images,
            poses,
            masks,
            text: None,
            noise_level: 0,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let bad = |m: String| Err(DegradeError::InvalidBatch(m));
        if self.images.is_empty() {
            return bad("batch has no views".into());
        }
        if self.images.len() != self.poses.len() || self.images.len() != self.masks.len() {
            return bad(format!(
                "{} images, {} poses, {} masks",
                self.images.len(),
                self.poses.len(),
                self.masks.len()
            ));
        }
        for (i, (img, m)) in self.images.iter().zip(&self.masks).enumerate() {
            if img.width != m.width || img.height != m.height {
                return bad(format!("view {i}: mask size differs from image size"));
            }
            if !img.data.iter().all(|v| (0.0..=1.0).contains(v)) {
                return bad(format!("view {i}: pixel values outside [0, 1]"));
            }
            if let Err(e) = self.poses[i].validate() {
                return bad(format!("view {i}: {e}"));
            }
        }
        Ok(())
    }
}

/// Probabilities and parameter ranges of every degradation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub first_blur_prob: f64,
    pub second_blur_prob: f64,
    pub blur_kernel_sizes: Vec<usize>,
    pub blur_sigma: [f64; 2],
    pub noise_prob: f64,
    pub noise_sigma_range: [f64; 2],
    pub resize_range: [f64; 2],
    pub jpeg_quality: [u8; 2],
    pub sinc_prob: f64,
    pub sinc_cutoff_range: [f64; 2],
    pub camera_jitter_prob: f64,
    pub camera_jitter_strength: [f64; 2],
    pub color_shift_prob: f64,
    pub grid_distortion_prob: f64,
    pub grid_distortion_strength: [f64; 2],
    pub translucent_mask_prob: f64,
    pub translucent_alpha: [f64; 2],
    pub no_aug_prob: f64,
    pub shared_across_views_prob: f64,
    pub mask_dilation_px: usize,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            first_blur_prob: 0.8,
            second_blur_prob: 0.3,
            blur_kernel_sizes: (7..=21).step_by(2).collect(),
            blur_sigma: [0.2, 3.0],
            noise_prob: 0.5,
            noise_sigma_range: [1.0 / 255.0, 10.0 / 255.0],
            resize_range: [0.3, 1.5],
            jpeg_quality: [80, 100],
            sinc_prob: 0.8,
            sinc_cutoff_range: [std::f64::consts::FRAC_PI_3, std::f64::consts::PI],
            camera_jitter_prob: 0.2,
            camera_jitter_strength: [0.05, 0.1],
            color_shift_prob: 0.3,
            grid_distortion_prob: 0.3,
            grid_distortion_strength: [0.2, 0.5],
            translucent_mask_prob: 0.3,
            translucent_alpha: [0.2, 0.5],
            no_aug_prob: 0.1,
            shared_across_views_prob: 0.5,
            mask_dilation_px: 3,
        }
    }
}

impl DegradationConfig {
    /// Every stage disabled and the no-augmentation branch always taken.
    pub fn disabled() -> Self {
        Self {
            first_blur_prob: 0.0,
            second_blur_prob: 0.0,
            noise_prob: 0.0,
            sinc_prob: 0.0,
            camera_jitter_prob: 0.0,
            color_shift_prob: 0.0,
            grid_distortion_prob: 0.0,
            translucent_mask_prob: 0.0,
            no_aug_prob: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        let bad = |m: String| Err(DegradeError::InvalidConfig(m));
        let probs = [
            ("first_blur_prob", self.first_blur_prob),
            ("second_blur_prob", self.second_blur_prob),
            ("noise_prob", self.noise_prob),
            ("sinc_prob", self.sinc_prob),
            ("camera_jitter_prob", self.camera_jitter_prob),
            ("color_shift_prob", self.color_shift_prob),
            ("grid_distortion_prob", self.grid_distortion_prob),
            ("translucent_mask_prob", self.translucent_mask_prob),
            ("no_aug_prob", self.no_aug_prob),
            ("shared_across_views_prob", self.shared_across_views_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        let ranges = [
            ("blur_sigma", self.blur_sigma),
            ("noise_sigma_range", self.noise_sigma_range),
            ("resize_range", self.resize_range),
            ("sinc_cutoff_range", self.sinc_cutoff_range),
            ("camera_jitter_strength", self.camera_jitter_strength),
            ("grid_distortion_strength", self.grid_distortion_strength),
            ("translucent_alpha", self.translucent_alpha),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} = [{lo}, {hi}] is not an ordered range"));
            }
            if lo < 0.0 {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.blur_sigma[0] > 0.0) {
            return bad("blur_sigma must be positive".into());
        }
        if !(self.resize_range[0] > 0.0) {
            return bad("resize_range must be positive".into());
        }
        if !(self.sinc_cutoff_range[0] > 0.0) {
            return bad("sinc_cutoff_range must be positive".into());
        }
        if self.translucent_alpha[1] > 1.0 {
            return bad("translucent_alpha must lie in [0, 1]".into());
        }
        let [q0, q1] = self.jpeg_quality;
        if !(1 <= q0 && q0 <= q1 && q1 <= 100) {
            return bad(format!("jpeg_quality = [{q0}, {q1}] must be ordered within [1, 100]"));
        }
        if self.blur_kernel_sizes.is_empty() {
            return bad("blur_kernel_sizes is empty".into());
        }
        for &k in &self.blur_kernel_sizes {
            filters::check_kernel_size(k).map_err(|e| DegradeError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_values() {
        let c = DegradationConfig::default();
        c.validate().unwrap();
        assert_eq!(c.blur_kernel_sizes, vec![7, 9, 11, 13, 15, 17, 19, 21]);
        assert_eq!(c.first_blur_prob, 0.8);
        assert_eq!(c.grid_distortion_strength, [0.2, 0.5]);
    }

    #[test]
    fn config_json_uses_field_names_and_rejects_unknown() {
        let c: DegradationConfig = serde_json::from_str(r#"{"noise_prob": 0.25}"#).unwrap();
        assert_eq!(c.noise_prob, 0.25);
        assert_eq!(c.sinc_prob, 0.8);
        assert!(serde_json::from_str::<DegradationConfig>(r#"{"noise": 1}"#).is_err());
        let bad = DegradationConfig {
            resize_range: [1.5, 0.3],
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(DegradeError::InvalidConfig(_))));
    }
}
