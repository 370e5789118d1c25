//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mvenhance::datasetio::{make_toy_scene, ToySceneKind};
use mvenhance::degrade::{
    degrade_batch, noise_level_augment, replay, DegradationConfig, FrequencyStats, MultiViewBatch,
};
use mvenhance::demo::{refinement_benchmark, run_demo, DemoConfig, RefineBenchConfig};
use mvenhance::denoiser::{
    ddim_sample, decode_latent, encode_latent, latent_loss_grad, mv_diffusion_loss_with, DdimSettings,
    DenoiseContext, DenoiserConfig, DenoiserError, DenoiserParams, LatentInstance, NoisePredictor, NoiseSchedule,
    TextCondition, ViewGeometry,
};
use mvenhance::epiagg::{correspondence_map, hybrid_weight, NearViewAggregator, DEFAULT_EPS};
use mvenhance::featops::{FeatureMap, ViewSlice};
use mvenhance::image::Image;
use mvenhance::metrics::{detail_energy, wavelet_color_fix, DEFAULT_WAVELET_LEVELS};
use mvenhance::mvgeom::{
    fundamental_matrix, fundamental_matrix_between, row_approximation_error, CameraPose, FundamentalMatrix,
    Intrinsics, OrbitParams,
};
use mvenhance::optim3d::{render_backward, render_with, RenderSettings, VoxelScene};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("runtime {:.1}s exceeds {limit_s}s", elapsed.as_secs_f64())
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(normal(rng), normal(rng), normal(rng));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Camera on a jittered sphere looking near the origin.
fn random_pose(rng: &mut ChaCha8Rng, size: usize) -> CameraPose {
    let intr = Intrinsics::from_fov(size, size, rng.gen_range(35.0..60.0));
    let eye = unit_vector(rng) * rng.gen_range(2.5..4.0);
    let target = Vector3::new(
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.2..0.2),
    );
    CameraPose::look_at(intr, eye, target).expect("valid look-at pose")
}

fn in_image(p: Option<(f64, f64)>, pose: &CameraPose) -> Option<(f64, f64)> {
    p.filter(|&(x, y)| x >= 0.0 && y >= 0.0 && x < pose.width as f64 && y < pose.height as f64)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 50 {
        let a = random_pose(&mut rng, 64);
        let b = random_pose(&mut rng, 64);
        if (a.center - b.center).norm() < 0.5 {
            continue;
        }
        let f = fundamental_matrix(&a, &b).map_err(|e| e.to_string())?;
        let mut points = 0;
        let mut tries = 0;
        while points < 1000 {
            tries += 1;
            ensure(tries < 1_000_000, || "could not sample visible points".into())?;
            let x = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let (Some(pa), Some(pb)) = (in_image(a.project(&x), &a), in_image(b.project(&x), &b)) else {
                continue;
            };
            let r = Vector3::new(pb.0, pb.1, 1.0).dot(&(f.m * Vector3::new(pa.0, pa.1, 1.0)));
            worst = worst.max(r.abs());
            points += 1;
        }
        pairs += 1;
    }
    ensure(worst < 1e-8, || format!("max |x_b' F x_a| = {worst:e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("50 pairs x 1000 points, max residual {worst:.2e}, {:.2}s", start.elapsed().as_secs_f64()))
}

/// Exhaustive search written from scratch: line through `F·x`, token-unit
/// distance to every token, smallest cosine distance, lowest index on ties.
fn brute_force_targets(fv: &[f64], fk: &[f64], h_f: usize, w_f: usize, c: usize, f: &FundamentalMatrix, eps: f64) -> Vec<Option<usize>> {
    let (sx_a, sy_a) = (f.size_a.0 as f64 / w_f as f64, f.size_a.1 as f64 / h_f as f64);
    let (sx_b, sy_b) = (f.size_b.0 as f64 / w_f as f64, f.size_b.1 as f64 / h_f as f64);
    let cos_dist = |u: &[f64], v: &[f64]| {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            1.0
        } else {
            1.0 - dot / (nu * nv)
        }
    };
    (0..h_f * w_f)
        .map(|i| {
            let (r, col) = (i / w_f, i % w_f);
            let x = Vector3::new(sx_a * (col as f64 + 0.5), sy_a * (r as f64 + 0.5), 1.0);
            let l = f.m * x;
            if (l.x * l.x + l.y * l.y).sqrt() < 1e-12 {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..h_f * w_f {
                let (rj, cj) = (j / w_f, j % w_f);
                let px = sx_b * (cj as f64 + 0.5);
                let py = sy_b * (rj as f64 + 0.5);
                // distance in token units: scale each axis by its stride
                let (a, b) = (l.x * sx_b, l.y * sy_b);
                let d = (l.x * px + l.y * py + l.z).abs() / (a * a + b * b).sqrt();
                if d > eps {
                    continue;
                }
                let dist = cos_dist(&fv[i * c..(i + 1) * c], &fk[j * c..(j + 1) * c]);
                if best.map_or(true, |(_, bd)| dist < bd) {
                    best = Some((j, dist));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (h_f, w_f, c) = (16, 16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut matched = 0;
    let mut tied = 0;
    for inst in 0..100 {
        let a = random_pose(&mut rng, 64);
        let b = loop {
            let b = random_pose(&mut rng, 64);
            if (a.center - b.center).norm() > 0.5 {
                break b;
            }
        };
        let f = fundamental_matrix(&a, &b).map_err(|e| e.to_string())?;
        let fv: Vec<f64> = (0..h_f * w_f * c).map(|_| normal(&mut rng)).collect();
        let mut fk: Vec<f64> = (0..h_f * w_f * c).map(|_| normal(&mut rng)).collect();
        // exact duplicates force ties that only the index rule can break
        for _ in 0..64 {
            let (s, d) = (rng.gen_range(0..h_f * w_f), rng.gen_range(0..h_f * w_f));
            let tok = fk[s * c..(s + 1) * c].to_vec();
            fk[d * c..(d + 1) * c].copy_from_slice(&tok);
            tied += 1;
        }
        let sv = ViewSlice::new(h_f, w_f, c, &fv).map_err(|e| e.to_string())?;
        let sk = ViewSlice::new(h_f, w_f, c, &fk).map_err(|e| e.to_string())?;
        let map = correspondence_map(sv, sk, &f, DEFAULT_EPS).map_err(|e| e.to_string())?;
        let oracle = brute_force_targets(&fv, &fk, h_f, w_f, c, &f, DEFAULT_EPS);
        if let Some(i) = (0..h_f * w_f).find(|&i| map.targets[i] != oracle[i]) {
            return Err(format!("instance {inst} token {i}: {:?} vs oracle {:?}", map.targets[i], oracle[i]));
        }
        matched += map.valid_count();
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "100 instances index-exact ({matched} matches, {tied} duplicated tokens), {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let intr = Intrinsics::from_fov(64, 64, 45.0);
    let mut worst_parallel: f64 = 0.0;
    for dx in [0.1, 0.5, 1.0, -2.0] {
        let a = CameraPose::new(intr, Matrix3::identity(), Vector3::new(0.0, 0.0, 4.0)).map_err(|e| e.to_string())?;
        let b = CameraPose::new(intr, Matrix3::identity(), Vector3::new(dx, 0.0, 4.0)).map_err(|e| e.to_string())?;
        let e = row_approximation_error(&[a, b], 16, 16).map_err(|e| e.to_string())?;
        worst_parallel = worst_parallel.max(e);
    }
    // zero up to roundoff in the fundamental matrix, in token rows
    ensure(worst_parallel < 1e-9, || format!("parallel-axis error {worst_parallel:e}"))?;
    let mut errs = Vec::new();
    for step in 0..=6 {
        let off = (5.0 * step as f64).to_radians();
        let poses: Vec<CameraPose> = (0..4)
            .map(|k| {
                let p = OrbitParams {
                    azimuth: k as f64 * std::f64::consts::FRAC_PI_2,
                    elevation: if k % 2 == 1 { off } else { 0.0 },
                    radius: 3.0,
                    target: [0.0; 3],
                };
                CameraPose::orbit(intr, &p).expect("orbit pose")
            })
            .collect();
        errs.push(row_approximation_error(&poses, 16, 16).map_err(|e| e.to_string())?);
    }
    ensure(errs.windows(2).all(|w| w[1] > w[0]), || format!("not strictly increasing: {errs:?}"))?;
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.3}")).collect();
    Ok(format!("parallel error {worst_parallel:.1e}; 0..30 deg offsets: [{}]", shown.join(", ")))
}

fn criterion_4() -> Outcome {
    for s in [1e-6, 0.01, 0.3, 0.5, 0.77, 1.0, 2.0] {
        let w = hybrid_weight(0.5, s, s);
        ensure(w == 0.5, || format!("w(0.5, {s}, {s}) = {w}"))?;
    }
    let w = hybrid_weight(0.5, 1.0, 0.5);
    ensure((w - 2.0 / 3.0).abs() <= 1e-12, || format!("w(0.5, 1, 0.5) = {w}"))?;
    Ok(format!("w(0.5,s,s) = 0.5; w(0.5,1,0.5) = {w:.15}"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (h_f, w_f, c) = (6, 6, 4);
    let n = h_f * w_f * c;
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut unstable = 0;
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let poses: Vec<CameraPose> = (0..3)
            .map(|k| {
                let p = OrbitParams {
                    azimuth: k as f64 * 0.6 + rng.gen_range(-0.1..0.1),
                    elevation: rng.gen_range(0.0..0.4),
                    radius: 3.0,
                    target: [0.0; 3],
                };
                CameraPose::orbit(Intrinsics::from_fov(48, 48, 45.0), &p).expect("orbit pose")
            })
            .collect();
        let fp = fundamental_matrix_between(1, &poses[1], 0, &poses[0]).map_err(|e| e.to_string())?;
        let fnx = fundamental_matrix_between(1, &poses[1], 2, &poses[2]).map_err(|e| e.to_string())?;
        let w_d = rng.gen_range(0.3..0.7);
        let mut inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let upstream: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let run = |inputs: &[Vec<f64>]| -> Result<(f64, NearViewAggregator), String> {
            let s = |k: usize| ViewSlice::new(h_f, w_f, c, &inputs[k]).expect("shape");
            let mut agg = NearViewAggregator::new();
            let out = agg.forward(s(1), s(0), s(2), &fp, &fnx, w_d, DEFAULT_EPS).map_err(|e| e.to_string())?;
            Ok((out.iter().zip(&upstream).map(|(a, b)| a * b).sum(), agg))
        };
        let (_, base) = run(&inputs)?;
        let rec = base.record().expect("record").clone();
        let g = base.ste_backward(&upstream).map_err(|e| e.to_string())?;
        let grads = [&g.f_prev, &g.f_v, &g.f_next];
        for _ in 0..12 {
            let k = rng.gen_range(0..3);
            let j = rng.gen_range(0..n);
            let orig = inputs[k][j];
            inputs[k][j] = orig + h;
            let (lp, ap) = run(&inputs)?;
            inputs[k][j] = orig - h;
            let (lm, am) = run(&inputs)?;
            inputs[k][j] = orig;
            let same = |a: &NearViewAggregator| {
                let r = a.record().expect("record");
                r.m_prev == rec.m_prev && r.m_next == rec.m_next
            };
            if !(same(&ap) && same(&am)) {
                unstable += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let a = grads[k][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            probes += 1;
        }
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:e}"))?;
    ensure(probes >= 20 * 10, || format!("only {probes} argmin-stable probes"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "24 seeds, {probes} argmin-stable probes ({unstable} skipped as unstable), worst rel err {worst:.2e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Recovers the exact noise from the clean latent it was built from.
struct OracleDenoiser {
    z0: FeatureMap,
}

impl NoisePredictor for OracleDenoiser {
    fn predict(&self, z_t: &FeatureMap, t: usize, _ctx: &DenoiseContext) -> Result<FeatureMap, DenoiserError> {
        let s = NoiseSchedule::default();
        let (a, sg) = (s.alpha(t), s.sigma(t));
        let data = z_t.data().iter().zip(self.z0.data()).map(|(z, x)| (z - a * x) / sg).collect();
        let [v, h, w, c] = z_t.dims();
        Ok(FeatureMap::new(v, h, w, c, data)?)
    }
}

fn criterion_6() -> Outcome {
    let cfg = DenoiserConfig {
        latent_channels: 8,
        width: 8,
        heads: 2,
        pose_base: 4,
        ..DenoiserConfig::default()
    };
    let (_, toy) = make_toy_scene(ToySceneKind::CheckerCube, 4);
    let mut params = DenoiserParams::init(cfg.clone(), 9).map_err(|e| e.to_string())?;
    // zero-initialized layers would hide most of the graph from the check
    params.randomize_zero_layers(10, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = FeatureMap::new(2, 4, 4, 8, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(|e| e.to_string())?;
    let inst = LatentInstance {
        z0: z0.clone(),
        images: toy.images[..2].to_vec(),
        poses: toy.poses[..2].to_vec(),
        text: TextCondition::new("a cube", cfg.text_dim, cfg.max_text_tokens),
    };
    let (t, seed, h) = (500, 3, 1e-4);
    let base = latent_loss_grad(&params, &inst, t, seed, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for pi in 0..params.names().len() {
        let n = params.tensors()[pi].data.len();
        for j in [0, n / 2, n - 1] {
            let mut p = params.clone();
            p.tensors_mut()[pi].data[j] += h;
            let mut m = params.clone();
            m.tensors_mut()[pi].data[j] -= h;
            let lp = latent_loss_grad(&p, &inst, t, seed, Some(&base.plans)).map_err(|e| e.to_string())?.loss;
            let lm = latent_loss_grad(&m, &inst, t, seed, Some(&base.plans)).map_err(|e| e.to_string())?.loss;
            let fd = (lp - lm) / (2.0 * h);
            let a = base.grads[pi].data[j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            probes += 1;
        }
    }
    ensure(worst < 1e-3, || format!("worst relative error {worst:e}"))?;
    let ctx = DenoiseContext {
        cond: None,
        text: inst.text.clone(),
        geometry: ViewGeometry::new(&inst.poses).map_err(|e| e.to_string())?,
    };
    let oracle = OracleDenoiser { z0: z0.clone() };
    let mut worst_oracle: f64 = 0.0;
    for t in [1, 250, 999] {
        worst_oracle = worst_oracle.max(mv_diffusion_loss_with(&oracle, &z0, &ctx, t, 17).map_err(|e| e.to_string())?);
    }
    ensure(worst_oracle < 1e-20, || format!("oracle loss {worst_oracle:e}"))?;
    Ok(format!(
        "{probes} probes on 2x4x4x8, worst rel err {worst:.2e}; oracle loss {worst_oracle:.1e}"
    ))
}

fn toy_batch(views: usize) -> MultiViewBatch {
    let (_, mut b) = make_toy_scene(ToySceneKind::StripedSphere, 11);
    b.images.truncate(views);
    b.poses.truncate(views);
    b.masks.truncate(views);
    b
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = DegradationConfig::default();
    let hq = toy_batch(4);
    for seed in 0..8u64 {
        let outs: Vec<(MultiViewBatch, String)> = [1, 2, 4]
            .iter()
            .map(|&threads| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
                let (lq, rec) = pool.install(|| degrade_batch(&hq, &cfg, seed)).expect("degrade");
                (lq, rec.to_jsonl())
            })
            .collect();
        let bits = |b: &MultiViewBatch| b.images.iter().flat_map(|i| i.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        for o in &outs[1..] {
            ensure(bits(&o.0) == bits(&outs[0].0) && o.1 == outs[0].1 && o.0.poses == outs[0].0.poses, || {
                format!("seed {seed}: output differs across thread counts")
            })?;
        }
        let (lq, rec) = degrade_batch(&hq, &cfg, seed).map_err(|e| e.to_string())?;
        let parsed = mvenhance::degrade::DegradationRecord::from_jsonl(seed, &rec.to_jsonl()).map_err(|e| e.to_string())?;
        let again = replay(&hq, &parsed).map_err(|e| e.to_string())?;
        ensure(bits(&again) == bits(&lq) && again.poses == lq.poses, || format!("seed {seed}: replay differs"))?;
    }
    let single = toy_batch(1);
    let stages = ["first_blur", "noise", "sinc", "camera_jitter", "color_shift", "grid_distortion"];
    let expected = [0.8, 0.5, 0.8, 0.2, 0.3, 0.3];
    let mut stats = FrequencyStats::default();
    for seed in 0..10_000u64 {
        let (_, rec) = degrade_batch(&single, &cfg, 1_000_000 + seed).map_err(|e| e.to_string())?;
        stats.accumulate(&rec, 1, &stages);
    }
    let mut lines = Vec::new();
    let p = stats.no_aug_frequency();
    let ci = FrequencyStats::ci99(0.1, stats.trials);
    ensure((p - 0.1).abs() <= ci, || format!("no-aug frequency {p:.4} outside 0.1 ± {ci:.4}"))?;
    lines.push(format!("no_aug {p:.3}"));
    for (s, e) in stages.iter().zip(expected) {
        let f = stats.frequency(s);
        let ci = FrequencyStats::ci99(e, stats.augmented());
        ensure((f - e).abs() <= ci, || format!("{s} frequency {f:.4} outside {e} ± {ci:.4}"))?;
        lines.push(format!("{s} {f:.3}"));
    }
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "deterministic over 1/2/4 threads, replay exact; 10^4 trials: {}; {:.1}s",
        lines.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_8() -> Outcome {
    let b = toy_batch(2);
    let same = noise_level_augment(&b, 0, 5).map_err(|e| e.to_string())?;
    ensure(same.images == b.images, || "delta = 0 changed the views".into())?;
    // independent linear-beta schedule: beta_1 = 1e-4 .. beta_999 = 0.02
    let sched = NoiseSchedule::default();
    let mut cum = 1.0;
    let mut prev = -1.0;
    for delta in 0..=sched.max_level() {
        if delta > 0 {
            cum *= 1.0 - (1e-4 + (delta - 1) as f64 / 998.0 * (0.02 - 1e-4));
        }
        let var = sched.injected_variance(delta).map_err(|e| e.to_string())?;
        ensure((var - (1.0 - cum)).abs() < 1e-12, || format!("delta {delta}: variance {var} vs {}", 1.0 - cum))?;
        ensure(var > prev, || format!("variance not increasing at delta {delta}"))?;
        prev = var;
    }
    ensure(sched.injected_variance(sched.max_level() + 1).is_err(), || "out-of-range level accepted".into())?;
    Ok(format!("delta 0 identity; variance strictly increasing to {prev:.6} at delta {}", sched.max_level()))
}

fn criterion_9() -> Outcome {
    let cfg = DenoiserConfig {
        width: 16,
        ..DenoiserConfig::default()
    };
    let mut params = DenoiserParams::init(cfg.clone(), 21).map_err(|e| e.to_string())?;
    params.randomize_zero_layers(22, 0.2);
    let b = toy_batch(3);
    let z0 = encode_latent(&b.images).map_err(|e| e.to_string())?;
    let ctx_for = |caption: &str| -> Result<DenoiseContext, String> {
        Ok(DenoiseContext {
            cond: None,
            text: TextCondition::new(caption, cfg.text_dim, cfg.max_text_tokens),
            geometry: ViewGeometry::new(&b.poses).map_err(|e| e.to_string())?,
        })
    };
    let s = DdimSettings {
        noise_level: 300,
        steps: 6,
        cfg_scale: 4.5,
        seed: 8,
    };
    let a1 = ddim_sample(&params, &z0, &ctx_for("a striped ball")?, &s).map_err(|e| e.to_string())?;
    let a2 = ddim_sample(&params, &z0, &ctx_for("a striped ball")?, &s).map_err(|e| e.to_string())?;
    ensure(a1.dims() == z0.dims(), || format!("shape {:?} vs {:?}", a1.dims(), z0.dims()))?;
    ensure(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || "two runs differ".into())?;
    let guided = ddim_sample(&params, &z0, &ctx_for("something else")?, &s).map_err(|e| e.to_string())?;
    ensure(guided.data() != a1.data(), || "caption has no effect at cfg > 0".into())?;
    let s0 = DdimSettings { cfg_scale: 0.0, ..s.clone() };
    let u1 = ddim_sample(&params, &z0, &ctx_for("a striped ball")?, &s0).map_err(|e| e.to_string())?;
    let u2 = ddim_sample(&params, &z0, &ctx_for("a red cube on a table")?, &s0).map_err(|e| e.to_string())?;
    ensure(u1.data().iter().zip(u2.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || {
        "caption changes output at cfg = 0".into()
    })?;
    let d0 = DdimSettings { noise_level: 0, ..s };
    let r = ddim_sample(&params, &z0, &ctx_for("a striped ball")?, &d0).map_err(|e| e.to_string())?;
    let via_sampler = decode_latent(&r).map_err(|e| e.to_string())?;
    let round_trip = decode_latent(&encode_latent(&b.images).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(via_sampler == round_trip, || "delta = 0 differs from codec round trip".into())?;
    Ok("shape kept, bit-deterministic, caption-free at cfg 0, delta 0 = codec round trip".into())
}

fn random_scene(rng: &mut ChaCha8Rng, g: usize) -> VoxelScene {
    let mut s = VoxelScene::empty(g, [-1.0; 3], [1.0; 3]);
    s.density.iter_mut().for_each(|d| *d = rng.gen_range(0.0..4.0));
    s.color.iter_mut().for_each(|c| *c = rng.gen_range(0.1..0.9));
    s
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let settings = RenderSettings { steps: 48 };
    let (h, w) = (12, 12);
    let empty = VoxelScene::empty(8, [-1.0; 3], [1.0; 3]);
    let pose = random_pose(&mut rng, 12);
    let (img, _) = render_with(&empty, &pose, h, w, settings);
    ensure(img.data.iter().all(|&v| v == 1.0), || "empty scene is not pure white".into())?;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for _ in 0..3 {
        let scene = random_scene(&mut rng, 6);
        let pose = random_pose(&mut rng, w);
        let up: Vec<f64> = (0..h * w * 3).map(|_| normal(&mut rng)).collect();
        let loss = |s: &VoxelScene| -> f64 {
            render_with(s, &pose, h, w, settings).0.data.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let g = render_backward(&scene, &pose, h, w, settings, &up);
        // probe the voxels with the largest gradient so every probe is informative
        let mut order: Vec<usize> = (0..scene.cells()).collect();
        order.sort_by(|&a, &b| g.density[b].abs().total_cmp(&g.density[a].abs()));
        for &i in order.iter().take(4) {
            for field in 0..2 {
                let (j, a) = if field == 0 { (i, g.density[i]) } else { (3 * i + 1, g.color[3 * i + 1]) };
                let eh = 1e-5;
                let mut p = scene.clone();
                let mut m = scene.clone();
                if field == 0 {
                    p.density[j] += eh;
                    m.density[j] -= eh;
                } else {
                    p.color[j] += eh;
                    m.color[j] -= eh;
                }
                let fd = (loss(&p) - loss(&m)) / (2.0 * eh);
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                probes += 1;
            }
        }
    }
    ensure(probes >= 10, || format!("only {probes} probes"))?;
    ensure(worst < 1e-3, || format!("worst relative error {worst:e}"))?;
    Ok(format!("empty scene white; {probes} probes, worst rel err {worst:.2e}"))
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let cfg = RefineBenchConfig::default();
    let r = refinement_benchmark(&cfg).map_err(|e| e.to_string())?;
    let gain = r.gain();
    ensure(r.report.losses.len() == 2000, || format!("{} steps run", r.report.losses.len()))?;
    ensure(gain >= 5.0, || format!("gain {gain:.2} dB ({:.2} -> {:.2})", r.psnr_before, r.psnr_after))?;
    within(start.elapsed(), 600.0)?;
    Ok(format!(
        "held-out PSNR {:.2} -> {:.2} dB (+{gain:.2}) in 2000 steps, {:.1}s",
        r.psnr_before,
        r.psnr_after,
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_12() -> Outcome {
    let (_, b) = make_toy_scene(ToySceneKind::CheckerCube, 12);
    let mut worst_mean: f64 = 0.0;
    let mut worst_detail: f64 = 0.0;
    let mut worst_idem: f64 = 0.0;
    for src in &b.images {
        let reference = Image::new(src.width, src.height, src.data.iter().map(|v| 0.1 + 0.7 * v).collect());
        let shifted = Image::new(src.width, src.height, reference.data.iter().map(|v| v + 0.1).collect());
        let fixed = wavelet_color_fix(&shifted, &reference, DEFAULT_WAVELET_LEVELS).map_err(|e| e.to_string())?;
        let (mf, mr) = (fixed.channel_means(), reference.channel_means());
        for c in 0..3 {
            worst_mean = worst_mean.max((mf[c] - mr[c]).abs());
        }
        let (ef, es) = (detail_energy(&fixed, DEFAULT_WAVELET_LEVELS), detail_energy(&shifted, DEFAULT_WAVELET_LEVELS));
        worst_detail = worst_detail.max((ef - es).abs());
        let twice = wavelet_color_fix(&fixed, &reference, DEFAULT_WAVELET_LEVELS).map_err(|e| e.to_string())?;
        worst_idem = worst_idem.max(twice.data.iter().zip(&fixed.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(worst_mean < 1e-3, || format!("mean error {worst_mean:e}"))?;
    ensure(worst_detail < 1e-6, || format!("detail energy changed by {worst_detail:e}"))?;
    ensure(worst_idem < 1e-12, || format!("second pass moved pixels by {worst_idem:e}"))?;
    Ok(format!(
        "mean err {worst_mean:.1e}, detail drift {worst_detail:.1e}, idempotence {worst_idem:.1e}"
    ))
}

fn criterion_13() -> Outcome {
    let start = Instant::now();
    let r = run_demo(&DemoConfig::new(7)).map_err(|e| e.to_string())?;
    let gain = r.refine_gain();
    ensure(gain > 0.0, || format!("gain {gain:.3} dB"))?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "demo {:.2} -> {:.2} dB (+{gain:.2}) in {:.1}s",
        r.refine_psnr_before,
        r.refine_psnr_after,
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("epipolar constraint", criterion_1),
        ("correspondence oracle", criterion_2),
        ("row approximation", criterion_3),
        ("hybrid weight algebra", criterion_4),
        ("straight-through gradient", criterion_5),
        ("diffusion objective gradient", criterion_6),
        ("degradation pipeline", criterion_7),
        ("noise-level control", criterion_8),
        ("ddim contract", criterion_9),
        ("renderer gradients", criterion_10),
        ("refinement bar", criterion_11),
        ("wavelet color fix", criterion_12),
        ("end-to-end demo", criterion_13),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
