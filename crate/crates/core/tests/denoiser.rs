use mvenhance::datasetio::{make_toy_scene, ToySceneKind};
use mvenhance::degrade::MultiViewBatch;
use mvenhance::denoiser::{
    ddim_enhance, encode_latent, forward_denoise, mv_diffusion_loss, mv_diffusion_loss_with, pose_encoder,
    start_latent, train_smoke, DdimSettings, DenoiseContext, DenoiserConfig, DenoiserError, DenoiserParams,
    LatentInstance, NoisePredictor, NoiseSchedule, TextCondition, TrainConfig, ViewGeometry,
};
use mvenhance::featops::FeatureMap;

fn small() -> DenoiserConfig {
    DenoiserConfig {
        latent_channels: 12,
        width: 16,
        heads: 2,
        pose_base: 4,
        ..DenoiserConfig::default()
    }
}

fn toy(seed: u64) -> MultiViewBatch {
    make_toy_scene(ToySceneKind::StripedSphere, seed).1
}

struct Zero;

impl NoisePredictor for Zero {
    fn predict(&self, z_t: &FeatureMap, _t: usize, _ctx: &DenoiseContext) -> Result<FeatureMap, DenoiserError> {
        let [v, h, w, c] = z_t.dims();
        Ok(FeatureMap::zeros(v, h, w, c))
    }
}

fn ctx(b: &MultiViewBatch, caption: &str, cfg: &DenoiserConfig) -> DenoiseContext {
    DenoiseContext {
        cond: None,
        text: TextCondition::new(caption, cfg.text_dim, cfg.max_text_tokens),
        geometry: ViewGeometry::new(&b.poses).unwrap(),
    }
}

#[test]
fn zero_predictor_loss_is_noise_power() {
    let b = toy(1);
    let z0 = encode_latent(&b.images).unwrap();
    let losses: Vec<f64> = (0..8)
        .map(|s| mv_diffusion_loss_with(&Zero, &z0, &ctx(&b, "", &small()), 400, s).unwrap())
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    // 8 draws of 768 standard normals each
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

#[test]
fn dropped_caption_matches_empty_caption() {
    let cfg = small();
    let mut params = DenoiserParams::init(cfg.clone(), 2).unwrap();
    params.randomize_zero_layers(3, 0.2);
    let b = toy(2);
    let z = encode_latent(&b.images).unwrap();
    let dropped = DenoiseContext {
        text: TextCondition::new("a striped ball", cfg.text_dim, cfg.max_text_tokens).with_drop(true),
        ..ctx(&b, "", &cfg)
    };
    let a = forward_denoise(&z, 200, &dropped, &params).unwrap();
    let e = forward_denoise(&z, 200, &ctx(&b, "", &cfg), &params).unwrap();
    assert_eq!(a, e);
}

#[test]
fn start_latent_spread_grows_with_noise_level() {
    let b = toy(3);
    let z0 = encode_latent(&b.images).unwrap();
    let sched = NoiseSchedule::default();
    let mut prev = -1.0;
    for delta in [0, 10, 50, 200, 500, 999] {
        let z = start_latent(&z0, delta, 4, &sched);
        let a = sched.alpha(delta);
        let resid: Vec<f64> = z.data().iter().zip(z0.data()).map(|(x, y)| x - a * y).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!(var > prev, "delta {delta}: {var} <= {prev}");
        prev = var;
    }
}

#[test]
fn no_nan_over_random_seeds() {
    let cfg = small();
    let b = toy(5);
    for seed in 0..100u64 {
        let mut params = DenoiserParams::init(cfg.clone(), seed).unwrap();
        params.randomize_zero_layers(seed + 1000, 0.5);
        let t = 1 + (seed as usize * 97) % 999;
        let loss = mv_diffusion_loss(&b, &params, t, seed).unwrap();
        assert!(loss.is_finite(), "seed {seed}: {loss}");
    }
}

#[test]
fn pose_change_reaches_other_views_only_through_the_bottleneck() {
    let b = toy(6);
    let mut moved = b.clone();
    moved.poses[0] = b.poses[2].clone();
    for bottleneck in [false, true] {
        let cfg = DenoiserConfig {
            cross_view_bottleneck: bottleneck,
            ..small()
        };
        let mut params = DenoiserParams::init(cfg, 7).unwrap();
        params.randomize_zero_layers(8, 0.3);
        let a = pose_encoder(&b, &params).unwrap();
        let c = pose_encoder(&moved, &params).unwrap();
        assert_ne!(a.view(0).data, c.view(0).data);
        let others_same = (1..4).all(|v| a.view(v).data == c.view(v).data);
        assert_eq!(others_same, !bottleneck, "bottleneck = {bottleneck}");
    }
}

#[test]
fn training_lowers_the_loss() {
    let cfg = DenoiserConfig {
        width: 16,
        heads: 2,
        pose_base: 4,
        n_blocks: 1,
        ..DenoiserConfig::default()
    };
    let mut params = DenoiserParams::init(cfg.clone(), 11).unwrap();
    let data: Vec<LatentInstance> = (0..2)
        .map(|s| LatentInstance::from_batch(&toy(20 + s), &cfg).unwrap())
        .collect();
    let tc = TrainConfig {
        steps: 120,
        lr: 3e-3,
        seed: 4,
        ..TrainConfig::default()
    };
    let losses = train_smoke(&mut params, &data, &tc).unwrap();
    let head = losses[..30].iter().sum::<f64>() / 30.0;
    let tail = losses[losses.len() - 30..].iter().sum::<f64>() / 30.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn enhance_keeps_shape_and_rejects_bad_levels() {
    let cfg = small();
    let params = DenoiserParams::init(cfg, 12).unwrap();
    let b = toy(7);
    let s = DdimSettings {
        noise_level: 100,
        steps: 3,
        cfg_scale: 2.0,
        seed: 1,
    };
    let out = ddim_enhance(&b, &params, &s).unwrap();
    assert_eq!(out.len(), b.len());
    assert!(out.images.iter().all(|i| i.width == 64 && i.height == 64));
    assert!(out.images.iter().flat_map(|i| &i.data).all(|v| (0.0..=1.0).contains(v)));
    let bad = DdimSettings {
        noise_level: 5000,
        ..s.clone()
    };
    assert!(matches!(ddim_enhance(&b, &params, &bad), Err(DenoiserError::InvalidNoiseLevel { .. })));
    let zero = DdimSettings { steps: 0, ..s };
    assert!(matches!(ddim_enhance(&b, &params, &zero), Err(DenoiserError::InvalidSteps(0))));
}
