use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::stages::{StageContext, StageRegistry};
use super::{DegradationConfig, DegradeError, MultiViewBatch};
use crate::denoiser::NoiseSchedule;
use crate::image::{Image, Mask};
use crate::mvgeom::CameraPose;
use crate::rng::{draw_id, keyed_rng, stream_key, SHARED_STREAM};

/// One line of the audit trail. `view` is `None` for the batch-level draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub view: Option<usize>,
    pub op: String,
    pub params: Value,
    pub draw_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub seed: u64,
    pub entries: Vec<RecordEntry>,
}

impl DegradationRecord {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("serializable entry"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(seed: u64, text: &str) -> Result<Self, DegradeError> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| DegradeError::MalformedRecord(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<RecordEntry>, _>>()?;
        Ok(Self { seed, entries })
    }

    fn batch_entry(&self) -> Result<(bool, bool, usize), DegradeError> {
        let e = self
            .entries
            .iter()
            .find(|e| e.view.is_none() && e.op == "batch")
            .ok_or_else(|| DegradeError::MalformedRecord("no batch entry".into()))?;
        let get = |k: &str| e.params.get(k).cloned().unwrap_or(Value::Null);
        match (get("no_aug").as_bool(), get("shared").as_bool(), get("mask_dilation_px").as_u64()) {
            (Some(a), Some(s), Some(d)) => Ok((a, s, d as usize)),
            _ => Err(DegradeError::MalformedRecord("batch entry lacks no_aug/shared/mask_dilation_px".into())),
        }
    }

    pub fn no_aug(&self) -> bool {
        self.batch_entry().map(|b| b.0).unwrap_or(false)
    }

    pub fn shared(&self) -> bool {
        self.batch_entry().map(|b| b.1).unwrap_or(false)
    }

    pub fn applied(&self, view: usize, op: &str) -> bool {
        self.entries.iter().any(|e| e.view == Some(view) && e.op == op)
    }
}

fn apply_view(
    registry: &StageRegistry,
    image: &Image,
    pose: &CameraPose,
    mask: &Mask,
    dilation: usize,
    entries: &[&RecordEntry],
) -> Result<(Image, CameraPose), DegradeError> {
    let region = mask.dilate(dilation);
    let mut img = image.clone();
    let mut pose = pose.clone();
    for e in entries {
        let stage = registry
            .get(&e.op)
            .ok_or_else(|| DegradeError::UnknownStage(e.op.clone()))?;
        let before = img.clone();
        stage.apply(
            &mut StageContext {
                image: &mut img,
                pose: &mut pose,
                mask,
            },
            &e.params,
        )?;
        img.clamp01();
        for y in 0..img.height {
            for x in 0..img.width {
                if !region.get(x, y) {
                    let px = if stage.full_frame() { [1.0; 3] } else { before.pixel(x, y) };
                    img.set_pixel(x, y, px);
                }
            }
        }
    }
    Ok((img, pose))
}

pub fn degrade_batch(
    hq: &MultiViewBatch,
    cfg: &DegradationConfig,
    seed: u64,
) -> Result<(MultiViewBatch, DegradationRecord), DegradeError> {
    degrade_batch_with(&StageRegistry::standard(), hq, cfg, seed)
}

/// Runs every registered stage in order on every view. Stage decisions and
/// parameters come from streams keyed by `(seed, view, stage)`; with the
/// shared option every view reads the same stream.
pub fn degrade_batch_with(
    registry: &StageRegistry,
    hq: &MultiViewBatch,
    cfg: &DegradationConfig,
    seed: u64,
) -> Result<(MultiViewBatch, DegradationRecord), DegradeError> {
    cfg.validate()?;
    hq.validate()?;
    let mut brng = keyed_rng(seed, SHARED_STREAM, "batch");
    let no_aug = brng.gen::<f64>() < cfg.no_aug_prob;
    let shared = brng.gen::<f64>() < cfg.shared_across_views_prob;
    let mut rec = DegradationRecord {
        seed,
        entries: vec![RecordEntry {
            view: None,
            op: "batch".into(),
            params: json!({"no_aug": no_aug, "shared": shared, "mask_dilation_px": cfg.mask_dilation_px}),
            draw_id: draw_id(seed, SHARED_STREAM, "batch"),
        }],
    };
    if no_aug {
        return Ok((hq.clone(), rec));
    }
    let per_view: Vec<(Vec<RecordEntry>, Image, CameraPose)> = (0..hq.len())
        .into_par_iter()
        .map(|v| {
            let stream = if shared { SHARED_STREAM } else { v as u64 };
            let img = &hq.images[v];
            let mut entries = Vec::new();
            for stage in registry.iter() {
                let label = stage.name();
                let mut rng = keyed_rng(seed, stream, label);
                if rng.gen::<f64>() < stage.probability(cfg) {
                    let view_key = stream_key(seed, v as u64, &format!("{label}/field"));
                    let params = stage.sample(cfg, img.width, img.height, &hq.masks[v], &mut rng, view_key);
                    entries.push(RecordEntry {
                        view: Some(v),
                        op: label.to_string(),
                        params,
                        draw_id: draw_id(seed, stream, label),
                    });
                }
            }
            let refs: Vec<&RecordEntry> = entries.iter().collect();
            let (out, pose) = apply_view(registry, img, &hq.poses[v], &hq.masks[v], cfg.mask_dilation_px, &refs)?;
            Ok((entries, out, pose))
        })
        .collect::<Result<_, DegradeError>>()?;
    let mut lq = hq.clone();
    for (v, (entries, img, pose)) in per_view.into_iter().enumerate() {
        rec.entries.extend(entries);
        lq.images[v] = img;
        lq.poses[v] = pose;
    }
    Ok((lq, rec))
}

pub fn replay(hq: &MultiViewBatch, rec: &DegradationRecord) -> Result<MultiViewBatch, DegradeError> {
    replay_with(&StageRegistry::standard(), hq, rec)
}

/// Re-applies recorded stages with their recorded parameters.
pub fn replay_with(
    registry: &StageRegistry,
    hq: &MultiViewBatch,
    rec: &DegradationRecord,
) -> Result<MultiViewBatch, DegradeError> {
    hq.validate()?;
    let (no_aug, _, dilation) = rec.batch_entry()?;
    if no_aug {
        return Ok(hq.clone());
    }
    if let Some(e) = rec.entries.iter().find(|e| e.view.is_some_and(|v| v >= hq.len())) {
        return Err(DegradeError::MalformedRecord(format!(
            "entry for view {:?} but batch has {} views",
            e.view,
            hq.len()
        )));
    }
    let results: Vec<(Image, CameraPose)> = (0..hq.len())
        .into_par_iter()
        .map(|v| {
            let entries: Vec<&RecordEntry> = rec.entries.iter().filter(|e| e.view == Some(v)).collect();
            apply_view(registry, &hq.images[v], &hq.poses[v], &hq.masks[v], dilation, &entries)
        })
        .collect::<Result<_, _>>()?;
    let mut lq = hq.clone();
    for (v, (img, pose)) in results.into_iter().enumerate() {
        lq.images[v] = img;
        lq.poses[v] = pose;
    }
    Ok(lq)
}

/// Stage firing counts over many runs. Stage frequencies are measured on
/// view 0 of runs that took the augmentation branch, so each run contributes
/// one independent Bernoulli trial.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrequencyStats {
    pub trials: usize,
    pub no_aug: usize,
    pub shared: usize,
    pub stage_hits: BTreeMap<String, usize>,
    pub view_hits: BTreeMap<String, usize>,
    pub view_trials: usize,
}

impl FrequencyStats {
    pub fn accumulate(&mut self, rec: &DegradationRecord, n_views: usize, stage_names: &[&str]) {
        self.trials += 1;
        if rec.no_aug() {
            self.no_aug += 1;
            return;
        }
        if rec.shared() {
            self.shared += 1;
        }
        self.view_trials += n_views;
        for &name in stage_names {
            let hit = rec.applied(0, name);
            *self.stage_hits.entry(name.to_string()).or_default() += usize::from(hit);
            let views = (0..n_views).filter(|&v| rec.applied(v, name)).count();
            *self.view_hits.entry(name.to_string()).or_default() += views;
        }
    }

    pub fn augmented(&self) -> usize {
        self.trials - self.no_aug
    }

    pub fn no_aug_frequency(&self) -> f64 {
        self.no_aug as f64 / self.trials.max(1) as f64
    }

    pub fn frequency(&self, stage: &str) -> f64 {
        self.stage_hits.get(stage).copied().unwrap_or(0) as f64 / self.augmented().max(1) as f64
    }

    /// Half-width of the normal-approximation 99 % binomial interval.
    pub fn ci99(p: f64, n: usize) -> f64 {
        2.575_829_303_549 * (p * (1.0 - p) / n.max(1) as f64).sqrt()
    }

    pub fn to_json(&self) -> Value {
        let freqs: BTreeMap<&String, f64> = self.stage_hits.keys().map(|k| (k, self.frequency(k))).collect();
        json!({
            "trials": self.trials,
            "no_aug": self.no_aug,
            "no_aug_frequency": self.no_aug_frequency(),
            "shared": self.shared,
            "stage_hits_view0": self.stage_hits,
            "stage_frequency_view0": freqs,
            "view_hits": self.view_hits,
            "view_trials": self.view_trials,
        })
    }
}

/// Forward-diffuses the masked pixels to level `δ`; returns the standard
/// normal draw as well. Results are clamped to `[0, 1]`.
pub fn noise_level_augment_with_draw(
    batch: &MultiViewBatch,
    delta: usize,
    seed: u64,
) -> Result<(MultiViewBatch, Vec<Vec<f64>>), DegradeError> {
    let sched = NoiseSchedule::default();
    let t = sched
        .noise_level_to_timestep(delta)
        .map_err(|_| DegradeError::InvalidNoiseLevel {
            delta,
            max: sched.max_level(),
        })?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let mut out = batch.clone();
    out.noise_level = delta;
    let mut draws = Vec::with_capacity(batch.len());
    for (v, (img, mask)) in out.images.iter_mut().zip(&batch.masks).enumerate() {
        let mut rng = keyed_rng(seed, v as u64, "noise_level");
        let eps: Vec<f64> = (0..img.data.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for y in 0..img.height {
            for x in 0..img.width {
                if !mask.get(x, y) {
                    continue;
                }
                for c in 0..3 {
                    let i = img.idx(x, y) + c;
                    img.data[i] = (a * img.data[i] + s * eps[i]).clamp(0.0, 1.0);
                }
            }
        }
        draws.push(eps);
    }
    Ok((out, draws))
}

pub fn noise_level_augment(batch: &MultiViewBatch, delta: usize, seed: u64) -> Result<MultiViewBatch, DegradeError> {
    noise_level_augment_with_draw(batch, delta, seed).map(|(b, _)| b)
}
