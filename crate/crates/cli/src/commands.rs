use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use mvenhance::datasetio::{load_dataset, make_toy_scene, save_dataset, write_png};
use mvenhance::degrade::{degrade_batch, hsv_to_rgb, DegradationConfig, FrequencyStats, MultiViewBatch, StageRegistry};
use mvenhance::demo::{refinement_benchmark, run_demo, DemoConfig, RefineBenchConfig};
use mvenhance::denoiser::{ddim_enhance, DdimSettings, DenoiserConfig, DenoiserParams};
use mvenhance::epiagg::{geometric_weight, ring_fundamentals, NearViewAggregator};
use mvenhance::featops::FeatureMap;
use mvenhance::image::{Image, Mask};
use mvenhance::metrics::{psnr, ssim, wavelet_color_fix, DEFAULT_WAVELET_LEVELS};
use mvenhance::mvgeom::{epipolar_line, row_approximation_error, token_center_pixel, token_stride, FundamentalMatrix};
use mvenhance::optim3d::{read_scene, refine_with_eval, write_scene, RefineConfig, RefineReport, VoxelScene};
use mvenhance::rng::stream_key;

use crate::snapshot::write_run_json;
use crate::{AugmentArgs, Cli, Command, DemoArgs, EnhanceArgs, EpipolarArgs, EvalArgs, OptimizeArgs, ToyArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Toy(a) => toy(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::Epipolar(a) => epipolar(cli, a),
        Command::Enhance(a) => enhance(cli, a),
        Command::Optimize(a) => optimize(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Demo(a) => demo(cli, a),
    }
}

fn load(dir: &Path) -> Result<MultiViewBatch> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_scene(path: &Path, scene: &VoxelScene) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_scene(scene, BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))
}

fn toy(cli: &Cli, a: &ToyArgs) -> Result<()> {
    let (scene, batch) = make_toy_scene(a.kind, cli.seed);
    save_dataset(&batch, &a.out)?;
    if a.with_scene {
        save_scene(&a.out.join("scene.mvvx"), &scene)?;
    }
    write_run_json(&a.out, cli, json!({"kind": a.kind, "views": batch.len()}), &[])?;
    println!("wrote {} views of {} to {}", batch.len(), a.kind.name(), a.out.display());
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let hq = load(&a.input)?;
    let cfg: DegradationConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DegradationConfig::default(),
    };
    let (lq, rec) = degrade_batch(&hq, &cfg, cli.seed)?;
    save_dataset(&lq, &a.out)?;
    write_text(&a.out.join("record.jsonl"), &rec.to_jsonl())?;
    let names = StageRegistry::standard().names();
    let mut stats = FrequencyStats::default();
    stats.accumulate(&rec, hq.len(), &names);
    for i in 0..a.stats_trials {
        let (_, r) = degrade_batch(&hq, &cfg, stream_key(cli.seed, i as u64, "augment/stats"))?;
        stats.accumulate(&r, hq.len(), &names);
    }
    write_text(&a.out.join("stats.json"), &(serde_json::to_string_pretty(&stats.to_json())? + "\n"))?;
    let inputs: Vec<&Path> = std::iter::once(a.input.as_path()).chain(a.config.as_deref()).collect();
    write_run_json(&a.out, cli, &cfg, &inputs)?;
    println!(
        "degraded {} views ({} record entries, no-aug {}) into {}",
        lq.len(),
        rec.entries.len(),
        rec.no_aug(),
        a.out.display()
    );
    Ok(())
}

/// Block-averaged RGB with the view mean removed, `tokens × tokens × 3`.
fn pooled_features(batch: &MultiViewBatch, tokens: usize) -> Result<FeatureMap> {
    let mut data = Vec::with_capacity(batch.len() * tokens * tokens * 3);
    for img in &batch.images {
        if img.width < tokens || img.height < tokens {
            bail!("{}x{} views are smaller than the {tokens}x{tokens} token grid", img.width, img.height);
        }
        let mean = img.channel_means();
        for r in 0..tokens {
            let (y0, y1) = (r * img.height / tokens, (r + 1) * img.height / tokens);
            for c in 0..tokens {
                let (x0, x1) = (c * img.width / tokens, (c + 1) * img.width / tokens);
                let mut acc = [0.0; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = img.pixel(x, y);
                        (0..3).for_each(|k| acc[k] += p[k]);
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                data.extend((0..3).map(|k| acc[k] / n - mean[k]));
            }
        }
    }
    Ok(FeatureMap::new(batch.len(), tokens, tokens, 3, data)?)
}

fn mark(img: &mut Image, x: f64, y: f64, rgb: [f64; 3]) {
    let (cx, cy) = (x.floor() as isize, y.floor() as isize);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && (px as usize) < img.width && (py as usize) < img.height {
                img.set_pixel(px as usize, py as usize, rgb);
            }
        }
    }
}

fn draw_line(img: &mut Image, [a, b, c]: [f64; 3], rgb: [f64; 3]) {
    if b.abs() >= a.abs() {
        for x in 0..img.width {
            let y = -(a * (x as f64 + 0.5) + c) / b;
            if y >= 0.0 && y < img.height as f64 {
                img.set_pixel(x, y as usize, rgb);
            }
        }
    } else {
        for y in 0..img.height {
            let x = -(b * (y as f64 + 0.5) + c) / a;
            if x >= 0.0 && x < img.width as f64 {
                img.set_pixel(x as usize, y, rgb);
            }
        }
    }
}

/// Source view on the left with sampled token centers, neighbour on the
/// right with their epipolar lines and matched token centers.
fn overlay(
    src: &Image,
    src_mask: &Mask,
    dst: &Image,
    f: &FundamentalMatrix,
    targets: &[Option<usize>],
    tokens: usize,
    samples: usize,
) -> Image {
    let (w, h) = (src.width, src.height);
    let mut out = Image::white(2 * w, h.max(dst.height));
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, src.pixel(x, y));
        }
    }
    let mut right = dst.clone();
    let (sa, sb) = (token_stride(f.size_a, tokens, tokens), token_stride(f.size_b, tokens, tokens));
    // matched tokens on the object, spread evenly over the list
    let valid: Vec<usize> = (0..targets.len())
        .filter(|&i| {
            let p = token_center_pixel(i / tokens, i % tokens, sa);
            targets[i].is_some() && src_mask.get((p[0] as usize).min(w - 1), (p[1] as usize).min(h - 1))
        })
        .collect();
    let n = samples.min(valid.len());
    let picks: Vec<usize> = (0..n).map(|k| valid[(2 * k + 1) * valid.len() / (2 * n)]).collect();
    let mut left = src.clone();
    for (k, &i) in picks.iter().enumerate() {
        let rgb = hsv_to_rgb([k as f64 / picks.len() as f64, 1.0, 1.0]);
        let px = token_center_pixel(i / tokens, i % tokens, sa);
        mark(&mut left, px[0], px[1], rgb);
        if let Ok(line) = epipolar_line(f, px) {
            draw_line(&mut right, line, rgb);
        }
        if let Some(j) = targets[i] {
            let q = token_center_pixel(j / tokens, j % tokens, sb);
            mark(&mut right, q[0], q[1], rgb);
        }
    }
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, left.pixel(x, y));
        }
    }
    for y in 0..right.height {
        for x in 0..right.width.min(w) {
            out.set_pixel(w + x, y, right.pixel(x, y));
        }
    }
    out
}

fn matrix_rows(f: &FundamentalMatrix) -> Vec<[f64; 3]> {
    (0..3).map(|r| [f.m[(r, 0)], f.m[(r, 1)], f.m[(r, 2)]]).collect()
}

fn epipolar(cli: &Cli, a: &EpipolarArgs) -> Result<()> {
    let batch = load(&a.input)?;
    if batch.len() < 3 {
        bail!("epipolar needs at least 3 views for a ring, got {}", batch.len());
    }
    if a.tokens == 0 {
        bail!("--tokens must be positive");
    }
    let feats = pooled_features(&batch, a.tokens)?;
    let fund = ring_fundamentals(&batch.poses)?;
    let row_err = row_approximation_error(&batch.poses, a.tokens, a.tokens)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut views = Vec::new();
    for (v, (fp, fnx)) in fund.iter().enumerate() {
        let w_d = geometric_weight(&batch.poses, v)?;
        let mut agg = NearViewAggregator::new();
        agg.forward(feats.view(v), feats.view(fp.view_b), feats.view(fnx.view_b), fp, fnx, w_d, a.eps)?;
        let rec = agg.record().expect("forward leaves a record");
        for (f, targets) in [(fp, &rec.m_prev), (fnx, &rec.m_next)] {
            let img = overlay(&batch.images[v], &batch.masks[v], &batch.images[f.view_b], f, targets, a.tokens, a.samples);
            write_png(&a.out.join(format!("overlay_{v:03}_{:03}.png", f.view_b)), &img)?;
        }
        views.push(json!({
            "view": v,
            "prev": fp.view_b,
            "next": fnx.view_b,
            "w_d": w_d,
            "fundamental_prev": matrix_rows(fp),
            "fundamental_next": matrix_rows(fnx),
            "matches_prev": rec.m_prev,
            "matches_next": rec.m_next,
            "similarity_prev": rec.weights.s_prev,
            "similarity_next": rec.weights.s_next,
            "weights": rec.weights.w,
        }));
    }
    let report = json!({
        "tokens": a.tokens,
        "eps": a.eps,
        "row_approximation_error": row_err,
        "views": views,
    });
    write_text(&a.out.join("epipolar.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_run_json(&a.out, cli, json!({"tokens": a.tokens, "eps": a.eps}), &[&a.input])?;
    println!("{} ring pairs, row approximation error {row_err:.3} token rows", 2 * batch.len());
    Ok(())
}

fn enhance(cli: &Cli, a: &EnhanceArgs) -> Result<()> {
    let mut lq = load(&a.input)?;
    if let Some(p) = &a.prompt {
        lq.text = Some(p.clone());
    }
    let settings = DdimSettings {
        noise_level: a.noise_level,
        steps: a.steps,
        cfg_scale: a.cfg_scale,
        seed: cli.seed,
    };
    let model = DenoiserConfig::default();
    let params = DenoiserParams::init(model.clone(), cli.seed)?;
    let mut out = ddim_enhance(&lq, &params, &settings)?;
    if a.color_fix {
        for (img, reference) in out.images.iter_mut().zip(&lq.images) {
            *img = wavelet_color_fix(img, reference, DEFAULT_WAVELET_LEVELS)?;
        }
    }
    save_dataset(&out, &a.output)?;
    let effective = json!({
        "ddim": settings,
        "model": model,
        "prompt": lq.text,
        "color_fix": a.color_fix,
        "wavelet_levels": DEFAULT_WAVELET_LEVELS,
    });
    write_run_json(&a.output, cli, effective, &[&a.input])?;
    println!("enhanced {} views into {}", out.len(), a.output.display());
    Ok(())
}

fn write_curves(dir: &Path, report: &RefineReport) -> Result<()> {
    let mut loss = String::from("step,loss,lr\n");
    for (i, (l, lr)) in report.losses.iter().zip(&report.lrs).enumerate() {
        loss.push_str(&format!("{},{l},{lr}\n", i + 1));
    }
    write_text(&dir.join("loss.csv"), &loss)?;
    let mut ev = String::from("step,psnr\n");
    for (s, p) in &report.eval_psnr {
        ev.push_str(&format!("{s},{p}\n"));
    }
    write_text(&dir.join("eval.csv"), &ev)
}

fn epoch_steps(views: usize, batch: usize) -> usize {
    views.div_ceil(batch.max(1)).max(1)
}

fn optimize(cli: &Cli, a: &OptimizeArgs) -> Result<()> {
    let mut refine = RefineConfig {
        steps: a.steps,
        lambda: a.lambda,
        lr: a.lr,
        seed: cli.seed,
        ..RefineConfig::default()
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(kind) = a.toy {
        let mut bench = RefineBenchConfig {
            kind,
            seed: cli.seed,
            ..RefineBenchConfig::default()
        };
        refine.eval_every = if a.eval_every > 0 { a.eval_every } else { epoch_steps(bench.refine_views, refine.batch_views) };
        bench.refine = refine;
        let r = refinement_benchmark(&bench)?;
        save_scene(&a.out.join("scene.mvvx"), &r.refined)?;
        write_curves(&a.out, &r.report)?;
        write_text(&a.out.join("summary.json"), &(serde_json::to_string_pretty(&r)? + "\n"))?;
        write_run_json(&a.out, cli, &bench, &[])?;
        println!(
            "held-out PSNR {:.2} -> {:.2} dB ({:+.2}) in {:.1}s",
            r.psnr_before,
            r.psnr_after,
            r.gain(),
            r.seconds
        );
        return Ok(());
    }
    let (Some(scene_path), Some(targets_path)) = (&a.scene, &a.targets) else {
        bail!("--scene and --targets are required without --toy");
    };
    let file = File::open(scene_path).with_context(|| format!("opening {}", scene_path.display()))?;
    let scene = read_scene(BufReader::new(file)).with_context(|| format!("reading {}", scene_path.display()))?;
    let targets = load(targets_path)?;
    let eval = a.eval_orbit.as_deref().map(load).transpose()?;
    refine.eval_every = if a.eval_every > 0 { a.eval_every } else { epoch_steps(targets.len(), refine.batch_views) };
    let (out, report) = refine_with_eval(&scene, &targets, &refine, eval.as_ref())?;
    save_scene(&a.out.join("scene.mvvx"), &out)?;
    write_curves(&a.out, &report)?;
    let mut inputs: Vec<&Path> = vec![scene_path, targets_path];
    inputs.extend(a.eval_orbit.as_deref());
    write_run_json(&a.out, cli, &refine, &inputs)?;
    match (report.eval_psnr.first(), report.eval_psnr.last()) {
        (Some(f), Some(l)) => println!("eval PSNR {:.2} -> {:.2} dB over {} steps", f.1, l.1, a.steps),
        _ => println!("final loss {:.5} after {} steps", report.losses.last().copied().unwrap_or(f64::NAN), a.steps),
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let pred = load(&a.pred)?;
    let gt = load(&a.gt)?;
    if pred.len() != gt.len() {
        bail!("{} predicted views vs {} ground-truth views", pred.len(), gt.len());
    }
    let mut csv = String::from("view,psnr,ssim\n");
    let (mut sp, mut ss) = (0.0, 0.0);
    for (v, (p, g)) in pred.images.iter().zip(&gt.images).enumerate() {
        let p = if a.color_fix { wavelet_color_fix(p, g, DEFAULT_WAVELET_LEVELS)? } else { p.clone() };
        let (ps, si) = (psnr(&p, g)?, ssim(&p, g)?);
        sp += ps;
        ss += si;
        csv.push_str(&format!("{v},{ps:.4},{si:.6}\n"));
    }
    let n = pred.len() as f64;
    csv.push_str(&format!("mean,{:.4},{:.6}\n", sp / n, ss / n));
    print!("{csv}");
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        write_text(out, &csv)?;
        let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        write_run_json(dir, cli, json!({"color_fix": a.color_fix, "wavelet_levels": DEFAULT_WAVELET_LEVELS}), &[&a.pred, &a.gt])?;
    }
    Ok(())
}

fn demo(cli: &Cli, a: &DemoArgs) -> Result<()> {
    let mut cfg = DemoConfig::new(cli.seed);
    cfg.kind = a.kind;
    cfg.bench.kind = a.kind;
    cfg.bench.refine.steps = a.steps;
    let r = run_demo(&cfg)?;
    println!("input views: degraded {:.2} dB, enhanced {:.2} dB", r.lq_psnr, r.enhanced_psnr);
    println!(
        "refinement held-out PSNR: before {:.2} dB, after {:.2} dB ({:+.2}) in {:.1}s",
        r.refine_psnr_before,
        r.refine_psnr_after,
        r.refine_gain(),
        r.seconds
    );
    if let Some(out) = &a.out {
        save_dataset(&r.hq, &out.join("hq"))?;
        save_dataset(&r.lq, &out.join("lq"))?;
        save_dataset(&r.enhanced, &out.join("enhanced"))?;
        save_scene(&out.join("refined.mvvx"), &r.refined)?;
        let mut loss = String::from("step,loss\n");
        for (i, l) in r.losses.iter().enumerate() {
            loss.push_str(&format!("{},{l}\n", i + 1));
        }
        write_text(&out.join("loss.csv"), &loss)?;
        let mut f = BufWriter::new(File::create(out.join("report.json")).context("creating report.json")?);
        serde_json::to_writer_pretty(&mut f, &r)?;
        writeln!(f)?;
        write_run_json(out, cli, &cfg, &[])?;
    }
    Ok(())
}
