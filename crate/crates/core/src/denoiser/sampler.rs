use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::model::{pose_encoder, DenoiseContext, NoisePredictor, ViewGeometry};
use super::params::{DenoiserParams, PATCH, POOL};
use super::text::TextCondition;
use super::{DenoiserError, NoiseSchedule};
use crate::degrade::{gaussian_blur, MultiViewBatch};
use crate::featops::FeatureMap;
use crate::image::Image;
use crate::rng::keyed_rng;

pub const DEFAULT_DDIM_STEPS: usize = 20;
pub const DEFAULT_CFG_SCALE: f64 = 4.5;
const DECODE_KERNEL: usize = 7;
const DECODE_SIGMA: f64 = 2.0;

/// Fixed pseudo-encoder: 8× average pool mapped to `[−1, 1]`, then 2×2
/// patches flattened as `(dy, dx, channel)`.
pub fn encode_latent(images: &[Image]) -> Result<FeatureMap, DenoiserError> {
    let f = POOL * PATCH;
    let first = images
        .first()
        .ok_or_else(|| DenoiserError::ShapeMismatch("no views to encode".into()))?;
    let (w, h) = (first.width, first.height);
    if w % f != 0 || h % f != 0 || w == 0 || h == 0 {
        return Err(DenoiserError::ShapeMismatch(format!("image {w}x{h} is not a multiple of {f}")));
    }
    let (pw, ph) = (w / POOL, h / POOL);
    let (tw, th) = (pw / PATCH, ph / PATCH);
    let mut data = Vec::with_capacity(images.len() * th * tw * 3 * PATCH * PATCH);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(DenoiserError::ShapeMismatch("views differ in size".into()));
        }
        let mut pooled = vec![0.0; pw * ph * 3];
        for y in 0..h {
            for x in 0..w {
                let p = img.pixel(x, y);
                let i = ((y / POOL) * pw + x / POOL) * 3;
                for c in 0..3 {
                    pooled[i + c] += p[c];
                }
            }
        }
        let n = (POOL * POOL) as f64;
        pooled.iter_mut().for_each(|v| *v = 2.0 * (*v / n) - 1.0);
        for ty in 0..th {
            for tx in 0..tw {
                for dy in 0..PATCH {
                    for dx in 0..PATCH {
                        let i = ((ty * PATCH + dy) * pw + tx * PATCH + dx) * 3;
                        data.extend_from_slice(&pooled[i..i + 3]);
                    }
                }
            }
        }
    }
    Ok(FeatureMap::new(images.len(), th, tw, 3 * PATCH * PATCH, data)?)
}

/// Inverse patching, nearest-neighbour upsampling, fixed Gaussian
/// smoothing, clamp to `[0, 1]`.
pub fn decode_latent(z: &FeatureMap) -> Result<Vec<Image>, DenoiserError> {
    let [views, th, tw, c] = z.dims();
    if c != 3 * PATCH * PATCH {
        return Err(DenoiserError::ShapeMismatch(format!(
            "latent has {c} channels, decoder expects {}",
            3 * PATCH * PATCH
        )));
    }
    let (pw, ph) = (tw * PATCH, th * PATCH);
    let (w, h) = (pw * POOL, ph * POOL);
    (0..views)
        .map(|v| {
            let mut pooled = vec![0.0; pw * ph * 3];
            for ty in 0..th {
                for tx in 0..tw {
                    let tok = z.token(v, ty, tx);
                    for dy in 0..PATCH {
                        for dx in 0..PATCH {
                            let i = ((ty * PATCH + dy) * pw + tx * PATCH + dx) * 3;
                            let k = (dy * PATCH + dx) * 3;
                            for ch in 0..3 {
                                pooled[i + ch] = (tok[k + ch] + 1.0) / 2.0;
                            }
                        }
                    }
                }
            }
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    let i = ((y / POOL) * pw + x / POOL) * 3;
                    data.extend_from_slice(&pooled[i..i + 3]);
                }
            }
            let mut img = gaussian_blur(&Image::new(w, h, data), DECODE_KERNEL, DECODE_SIGMA)
                .expect("fixed kernel is valid");
            img.clamp01();
            Ok(img)
        })
        .collect()
}

/// The DDIM timesteps from `delta` down to 0, at most `steps` transitions.
pub fn ddim_timesteps(delta: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..=steps)
        .map(|k| ((delta as f64) * (steps - k) as f64 / steps as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

/// `α_δ·z0 + σ_δ·ε` with per-view keyed noise.
pub fn start_latent(z0: &FeatureMap, delta: usize, seed: u64, sched: &NoiseSchedule) -> FeatureMap {
    let [v, h, w, c] = z0.dims();
    let (a, s) = (sched.alpha(delta), sched.sigma(delta));
    let mut data = Vec::with_capacity(z0.data().len());
    for view in 0..v {
        let mut rng = keyed_rng(seed, view as u64, "ddim/start");
        let base = view * h * w * c;
        for i in 0..h * w * c {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(a * z0.data()[base + i] + s * e);
        }
    }
    FeatureMap::new(v, h, w, c, data).expect("same dims")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DdimSettings {
    pub noise_level: usize,
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
}

impl Default for DdimSettings {
    fn default() -> Self {
        Self {
            noise_level: 200,
            steps: DEFAULT_DDIM_STEPS,
            cfg_scale: DEFAULT_CFG_SCALE,
            seed: 0,
        }
    }
}

/// Deterministic DDIM from `z_δ` to `t = 0` with classifier-free guidance
/// `ε̂ = ε_u + s·(ε_c − ε_u)`; the unconditional branch drops the caption.
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z0: &FeatureMap,
    ctx: &DenoiseContext,
    settings: &DdimSettings,
) -> Result<FeatureMap, DenoiserError> {
    let sched = NoiseSchedule::default();
    let delta = sched.noise_level_to_timestep(settings.noise_level)?;
    if settings.steps == 0 {
        return Err(DenoiserError::InvalidSteps(settings.steps));
    }
    if delta == 0 {
        return Ok(z0.clone());
    }
    let uncond = DenoiseContext {
        text: ctx.text.clone().with_drop(true),
        ..ctx.clone()
    };
    let [v, h, w, c] = z0.dims();
    let mut z = start_latent(z0, delta, settings.seed, &sched);
    let ts = ddim_timesteps(delta, settings.steps);
    for pair in ts.windows(2) {
        let (t, tn) = (pair[0], pair[1]);
        let eu = predictor.predict(&z, t, &uncond)?;
        let eps: Vec<f64> = if settings.cfg_scale == 0.0 {
            eu.data().to_vec()
        } else {
            let ec = predictor.predict(&z, t, ctx)?;
            eu.data()
                .iter()
                .zip(ec.data())
                .map(|(u, k)| u + settings.cfg_scale * (k - u))
                .collect()
        };
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let (an, sn) = (sched.alpha(tn), sched.sigma(tn));
        let data = z
            .data()
            .iter()
            .zip(&eps)
            .map(|(zt, e)| an * ((zt - s * e) / a) + sn * e)
            .collect();
        z = FeatureMap::new(v, h, w, c, data)?;
    }
    Ok(z)
}

/// Encodes the LQ views, runs [`ddim_sample`] with the model, decodes.
/// Poses, masks and caption carry over unchanged.
pub fn ddim_enhance(lq: &MultiViewBatch, params: &DenoiserParams, settings: &DdimSettings) -> Result<MultiViewBatch, DenoiserError> {
    ddim_enhance_with(lq, params, settings, |batch| {
        Ok(Some(pose_encoder(batch, params)?))
    })
}

pub fn ddim_enhance_with<P, F>(
    lq: &MultiViewBatch,
    predictor: &P,
    settings: &DdimSettings,
    condition: F,
) -> Result<MultiViewBatch, DenoiserError>
where
    P: NoisePredictor + HasTextWidth + ?Sized,
    F: Fn(&MultiViewBatch) -> Result<Option<FeatureMap>, DenoiserError>,
{
    let sched = NoiseSchedule::default();
    sched.noise_level_to_timestep(settings.noise_level)?;
    if settings.steps == 0 {
        return Err(DenoiserError::InvalidSteps(0));
    }
    let z0 = encode_latent(&lq.images)?;
    let z = if settings.noise_level == 0 {
        z0
    } else {
        let (dim, max) = predictor.text_width();
        let ctx = DenoiseContext {
            cond: condition(lq)?,
            text: TextCondition::new(lq.text.as_deref().unwrap_or(""), dim, max),
            geometry: ViewGeometry::new(&lq.poses)?,
        };
        ddim_sample(predictor, &z0, &ctx, settings)?
    };
    let mut out = lq.clone();
    out.images = decode_latent(&z)?;
    out.noise_level = settings.noise_level;
    Ok(out)
}

/// Caption embedding width and token cap a predictor expects.
pub trait HasTextWidth {
    fn text_width(&self) -> (usize, usize);
}

impl HasTextWidth for DenoiserParams {
    fn text_width(&self) -> (usize, usize) {
        (self.config.text_dim, self.config.max_text_tokens)
    }
}
