use rand_distr::{Distribution, StandardNormal};

use super::params::{Bound, DenoiserConfig, DenoiserParams};
use super::sampler::encode_latent;
use super::text::TextCondition;
use super::{DenoiserError, NoiseSchedule};
use crate::autodiff::{concat_rows, Tape, Tensor, Var};
use crate::degrade::MultiViewBatch;
use crate::epiagg::{aggregate_fuse_var, geometric_weight, plan_aggregation, ring_fundamentals, AggregationPlan};
use crate::featops::{multi_head_attention_var, sincos_encoding, FeatureMap};
use crate::image::Image;
use crate::mvgeom::{compute_plucker, CameraPose, FundamentalMatrix};
use crate::rng::keyed_rng;
use crate::rowattn::row_attention_var;

/// Camera data the view-consistent blocks need: ring fundamentals and
/// distance weights. Aggregation is skipped for fewer than two views.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGeometry {
    pub poses: Vec<CameraPose>,
    fundamentals: Option<Vec<(FundamentalMatrix, FundamentalMatrix)>>,
    w_d: Vec<f64>,
}

impl ViewGeometry {
    pub fn new(poses: &[CameraPose]) -> Result<Self, DenoiserError> {
        if poses.len() < 2 {
            return Ok(Self {
                poses: poses.to_vec(),
                fundamentals: None,
                w_d: Vec::new(),
            });
        }
        let w_d = (0..poses.len())
            .map(|v| geometric_weight(poses, v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            poses: poses.to_vec(),
            fundamentals: Some(ring_fundamentals(poses)?),
            w_d,
        })
    }

    pub fn views(&self) -> usize {
        self.poses.len()
    }
}

/// Everything besides the noisy latent and the timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseContext {
    /// Pose-encoder output, one token row per latent token; `None` bypasses
    /// the control branch.
    pub cond: Option<FeatureMap>,
    pub text: TextCondition,
    pub geometry: ViewGeometry,
}

/// Anything that predicts the noise in a latent.
pub trait NoisePredictor {
    fn predict(&self, z_t: &FeatureMap, t: usize, ctx: &DenoiseContext) -> Result<FeatureMap, DenoiserError>;
}

struct Ctx<'a> {
    cfg: &'a DenoiserConfig,
    dims: (usize, usize, usize),
    pos: Tensor,
    text: Tensor,
    geometry: &'a ViewGeometry,
}

/// Sinusoidal timestep features of width `c`.
pub fn timestep_features(t: usize, c: usize) -> Tensor {
    let half = c / 2;
    let mut d = Vec::with_capacity(c);
    for k in 0..half {
        let w = 10000f64.powf(-(k as f64) / half as f64);
        d.push((t as f64 * w).sin());
    }
    for k in 0..c - half {
        let w = 10000f64.powf(-(k as f64) / half.max(1) as f64);
        d.push((t as f64 * w).cos());
    }
    Tensor::new(1, c, d)
}

fn per_view_attention<'t>(x: Var<'t>, q: Var<'t>, k: Var<'t>, v: Var<'t>, views: usize, heads: usize) -> Var<'t> {
    let per = x.shape().0 / views;
    let outs: Vec<Var<'t>> = (0..views)
        .map(|view| {
            let rows: Vec<usize> = (view * per..(view + 1) * per).collect();
            multi_head_attention_var(q.gather_rows(&rows), k.gather_rows(&rows), v.gather_rows(&rows), heads)
        })
        .collect();
    concat_rows(&outs)
}

/// Self-attention → row attention → near-view aggregation → text
/// cross-attention → MLP, each with a residual path.
fn block<'t>(
    b: &Bound<'t, '_>,
    p: &str,
    x: Var<'t>,
    ctx: &Ctx<'_>,
    plans_in: &mut Option<std::slice::Iter<'_, AggregationPlan>>,
    plans_out: &mut Vec<AggregationPlan>,
) -> Result<Var<'t>, DenoiserError> {
    let (views, h, w) = ctx.dims;
    let g = |n: &str| b.get(&format!("{p}.{n}"));
    let n = x.layer_norm();
    let a = per_view_attention(
        x,
        n.matmul(g("self.wq")),
        n.matmul(g("self.wk")),
        n.matmul(g("self.wv")),
        views,
        ctx.cfg.heads,
    );
    let mut x = x.add(a.matmul(g("self.wo")));
    x = row_attention_var(
        x,
        ctx.dims,
        &ctx.pos,
        g("row.wq"),
        g("row.wk"),
        g("row.wv"),
        g("row.wo"),
        ctx.cfg.heads,
    );
    if let (true, Some(fund)) = (ctx.cfg.epipolar, &ctx.geometry.fundamentals) {
        let plan = match plans_in.as_mut().and_then(|it| it.next()) {
            Some(p) => p.clone(),
            None => {
                let fm = FeatureMap::from_tensor(views, h, w, &x.value())?;
                plan_aggregation(&fm, fund, &ctx.geometry.w_d, ctx.cfg.band_eps)?
            }
        };
        x = aggregate_fuse_var(x, &plan);
        plans_out.push(plan);
    }
    let tt = x.constant(ctx.text.clone());
    let q = x.layer_norm().matmul(g("cross.wq"));
    let c = multi_head_attention_var(q, tt.matmul(g("cross.wk")), tt.matmul(g("cross.wv")), ctx.cfg.heads);
    x = x.add(c.matmul(g("cross.wo")));
    let m = x
        .layer_norm()
        .matmul(g("mlp.w1"))
        .add_row(g("mlp.b1"))
        .silu()
        .matmul(g("mlp.w2"))
        .add_row(g("mlp.b2"));
    Ok(x.add(m))
}

/// Predicted noise on the tape, plus the aggregation plans in execution
/// order (trunk block 0, control block 0, trunk block 1, ...). Passing
/// `plans` replays a previous routing instead of searching again.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_var<'t>(
    b: &Bound<'t, '_>,
    cfg: &DenoiserConfig,
    z: Var<'t>,
    dims: (usize, usize, usize),
    t: usize,
    cond: Option<Var<'t>>,
    text: &TextCondition,
    geometry: &ViewGeometry,
    plans: Option<&[AggregationPlan]>,
) -> Result<(Var<'t>, Vec<AggregationPlan>), DenoiserError> {
    let (views, h, w) = dims;
    if z.shape() != (views * h * w, cfg.latent_channels) {
        return Err(DenoiserError::ShapeMismatch(format!(
            "latent is {:?}, expected ({}, {})",
            z.shape(),
            views * h * w,
            cfg.latent_channels
        )));
    }
    if geometry.views() != views {
        return Err(DenoiserError::ShapeMismatch(format!(
            "{views} latent views but {} poses",
            geometry.views()
        )));
    }
    if text.dim() != cfg.text_dim {
        return Err(DenoiserError::ShapeMismatch(format!(
            "text width {} but model expects {}",
            text.dim(),
            cfg.text_dim
        )));
    }
    let ctx = Ctx {
        cfg,
        dims,
        pos: sincos_encoding(h, w, views, cfg.width)?.to_tensor(),
        text: text.tokens(),
        geometry,
    };
    let temb = z
        .constant(timestep_features(t, cfg.width))
        .matmul(b.get("time.w"))
        .add_row(b.get("time.b"))
        .silu();
    let h0 = z
        .matmul(b.get("in.w"))
        .add_row(b.get("in.b"))
        .add_row(temb)
        .add(z.constant(ctx.pos.clone()));
    let mut plans_in = plans.map(|p| p.iter());
    let mut plans_out = Vec::new();
    let mut c = match cond {
        Some(cv) => {
            if cv.shape() != (views * h * w, cfg.width) {
                return Err(DenoiserError::ShapeMismatch(format!(
                    "condition is {:?}, expected ({}, {})",
                    cv.shape(),
                    views * h * w,
                    cfg.width
                )));
            }
            Some(h0.add(cv.matmul(b.get("ctrl.in"))))
        }
        None => None,
    };
    let mut x = h0;
    for i in 0..cfg.n_blocks {
        x = block(b, &format!("blocks.{i}"), x, &ctx, &mut plans_in, &mut plans_out)?;
        if i < cfg.control_blocks() {
            if let Some(cv) = c {
                let next = block(b, &format!("ctrl.{i}"), cv, &ctx, &mut plans_in, &mut plans_out)?;
                x = x.add(next.matmul(b.get(&format!("ctrl.out.{i}"))));
                c = Some(next);
            }
        }
    }
    let out = x.layer_norm().matmul(b.get("out.w")).add_row(b.get("out.b"));
    Ok((out, plans_out))
}

/// 3×3 stride-2 convolution with clamp-to-edge padding, as a gather into
/// patch rows `(ky, kx, channel)`.
fn conv_s2<'t>(x: Var<'t>, views: usize, h: usize, w: usize, wgt: Var<'t>, bias: Var<'t>) -> Var<'t> {
    let cin = x.shape().1;
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut idx = Vec::with_capacity(views * ho * wo * 9 * cin);
    for v in 0..views {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let y = (2 * oy + ky).saturating_sub(1).min(h - 1);
                        let xx = (2 * ox + kx).saturating_sub(1).min(w - 1);
                        let row = (v * h + y) * w + xx;
                        idx.extend((0..cin).map(|c| row * cin + c));
                    }
                }
            }
        }
    }
    x.gather(idx.into(), views * ho * wo, 9 * cin).matmul(wgt).add_row(bias).silu()
}

/// Nine-channel input rows (RGB then Plücker) for every pixel of every view.
pub fn pose_input(images: &[Image], poses: &[CameraPose]) -> Result<Tensor, DenoiserError> {
    if images.is_empty() || images.len() != poses.len() {
        return Err(DenoiserError::ShapeMismatch(format!(
            "{} images but {} poses",
            images.len(),
            poses.len()
        )));
    }
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * w * h * 9);
    for (img, pose) in images.iter().zip(poses) {
        if (img.width, img.height) != (w, h) {
            return Err(DenoiserError::ShapeMismatch("views differ in size".into()));
        }
        let pl = compute_plucker(pose, h, w)?;
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&img.pixel(x, y));
                data.extend_from_slice(&pl.get(y, x));
            }
        }
    }
    Ok(Tensor::new(images.len() * w * h, 9, data))
}

pub(crate) fn pose_encoder_var<'t>(
    b: &Bound<'t, '_>,
    cfg: &DenoiserConfig,
    images: &[Image],
    poses: &[CameraPose],
) -> Result<Var<'t>, DenoiserError> {
    let input = pose_input(images, poses)?;
    let (w, h) = (images[0].width, images[0].height);
    if w % 16 != 0 || h % 16 != 0 {
        return Err(DenoiserError::ShapeMismatch(format!("image {w}x{h} is not a multiple of 16")));
    }
    let views = images.len();
    let mut x = b.get("in.w").constant(input);
    let (mut ch, mut cw) = (h, w);
    for k in 0..4 {
        x = conv_s2(x, views, ch, cw, b.get(&format!("pose.conv{k}.w")), b.get(&format!("pose.conv{k}.b")));
        ch /= 2;
        cw /= 2;
    }
    if cfg.cross_view_bottleneck {
        let n = x.layer_norm();
        let a = multi_head_attention_var(
            n.matmul(b.get("pose.xattn.wq")),
            n.matmul(b.get("pose.xattn.wk")),
            n.matmul(b.get("pose.xattn.wv")),
            cfg.heads,
        );
        x = x.add(a.matmul(b.get("pose.xattn.wo")));
    }
    Ok(x.matmul(b.get("pose.proj.w")).add_row(b.get("pose.proj.b")))
}

/// Pose-aware condition at 1/16 of the image resolution.
pub fn pose_encoder(batch: &MultiViewBatch, params: &DenoiserParams) -> Result<FeatureMap, DenoiserError> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let v = pose_encoder_var(&b, &params.config, &batch.images, &batch.poses)?;
    let (w, h) = (batch.images[0].width / 16, batch.images[0].height / 16);
    Ok(FeatureMap::from_tensor(batch.len(), h, w, &v.value())?)
}

pub fn forward_denoise(
    z_t: &FeatureMap,
    t: usize,
    ctx: &DenoiseContext,
    params: &DenoiserParams,
) -> Result<FeatureMap, DenoiserError> {
    NoiseSchedule::default().noise_level_to_timestep(t)?;
    let tape = Tape::new();
    let b = params.bind(&tape);
    let [v, h, w, _] = z_t.dims();
    let z = tape.leaf(z_t.to_tensor());
    let cond = ctx.cond.as_ref().map(|c| tape.leaf(c.to_tensor()));
    let (out, _) = forward_var(&b, &params.config, z, (v, h, w), t, cond, &ctx.text, &ctx.geometry, None)?;
    Ok(FeatureMap::from_tensor(v, h, w, &out.value())?)
}

impl NoisePredictor for DenoiserParams {
    fn predict(&self, z_t: &FeatureMap, t: usize, ctx: &DenoiseContext) -> Result<FeatureMap, DenoiserError> {
        forward_denoise(z_t, t, ctx, self)
    }
}

/// Standard normal noise for every latent entry, one keyed stream per view.
pub fn diffusion_noise(dims: [usize; 4], seed: u64) -> FeatureMap {
    let [v, h, w, c] = dims;
    let mut data = Vec::with_capacity(v * h * w * c);
    for view in 0..v {
        let mut rng = keyed_rng(seed, view as u64, "diffusion/eps");
        data.extend((0..h * w * c).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    }
    FeatureMap::new(v, h, w, c, data).expect("non-empty dims")
}

/// `α_t·z + σ_t·ε`.
pub fn noisy_latent(z0: &FeatureMap, eps: &FeatureMap, t: usize, sched: &NoiseSchedule) -> FeatureMap {
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + s * e).collect();
    let [v, h, w, c] = z0.dims();
    FeatureMap::new(v, h, w, c, data).expect("same dims")
}

fn mse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64
}

/// Mean squared error between the drawn noise and its prediction, with a
/// caller-supplied predictor.
pub fn mv_diffusion_loss_with<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z0: &FeatureMap,
    ctx: &DenoiseContext,
    t: usize,
    seed: u64,
) -> Result<f64, DenoiserError> {
    let sched = NoiseSchedule::default();
    sched.noise_level_to_timestep(t)?;
    let eps = diffusion_noise(z0.dims(), seed);
    let zt = noisy_latent(z0, &eps, t, &sched);
    let pred = predictor.predict(&zt, t, ctx)?;
    if pred.dims() != eps.dims() {
        return Err(DenoiserError::ShapeMismatch("prediction shape differs from latent".into()));
    }
    Ok(mse(&eps, &pred))
}

/// Clean latent, conditioning images and poses, and caption for one
/// training example.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentInstance {
    pub z0: FeatureMap,
    pub images: Vec<Image>,
    pub poses: Vec<CameraPose>,
    pub text: TextCondition,
}

impl LatentInstance {
    pub fn from_batch(batch: &MultiViewBatch, cfg: &DenoiserConfig) -> Result<Self, DenoiserError> {
        let z0 = encode_latent(&batch.images)?;
        Ok(Self {
            z0,
            images: batch.images.clone(),
            poses: batch.poses.clone(),
            text: TextCondition::new(batch.text.as_deref().unwrap_or(""), cfg.text_dim, cfg.max_text_tokens),
        })
    }
}

/// Loss value, gradients for every parameter tensor (registration order),
/// and the aggregation routing used.
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub plans: Vec<AggregationPlan>,
}

/// The diffusion objective on the tape: pose encoder, control branch and
/// trunk all receive gradients. Aggregation routing is treated as fixed
/// during the backward pass; `plans` replays a previous routing.
pub fn latent_loss_grad(
    params: &DenoiserParams,
    inst: &LatentInstance,
    t: usize,
    seed: u64,
    plans: Option<&[AggregationPlan]>,
) -> Result<LossGrad, DenoiserError> {
    let sched = NoiseSchedule::default();
    sched.noise_level_to_timestep(t)?;
    let [v, h, w, c] = inst.z0.dims();
    let eps = diffusion_noise([v, h, w, c], seed);
    let zt = noisy_latent(&inst.z0, &eps, t, &sched);
    let geometry = ViewGeometry::new(&inst.poses)?;
    let tape = Tape::new();
    let b = params.bind(&tape);
    let cond = pose_encoder_var(&b, &params.config, &inst.images, &inst.poses)?;
    if cond.shape().0 != v * h * w {
        return Err(DenoiserError::ShapeMismatch(format!(
            "pose encoder yields {} tokens for a {}-token latent",
            cond.shape().0,
            v * h * w
        )));
    }
    let z = tape.leaf(zt.to_tensor());
    let (pred, used) = forward_var(&b, &params.config, z, (v, h, w), t, Some(cond), &inst.text, &geometry, plans)?;
    let diff = pred.sub(tape.leaf(eps.to_tensor()));
    let loss = diff.mul(diff).mean();
    let g = tape.backward(loss);
    let grads = b
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(var, t)| g.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
        .collect();
    Ok(LossGrad {
        loss: loss.value().data[0],
        grads,
        plans: used,
    })
}

/// Multi-view diffusion objective for a batch with the model's
/// own predictor.
pub fn mv_diffusion_loss(batch: &MultiViewBatch, params: &DenoiserParams, t: usize, seed: u64) -> Result<f64, DenoiserError> {
    let inst = LatentInstance::from_batch(batch, &params.config)?;
    latent_loss_grad(params, &inst, t, seed, None).map(|r| r.loss)
}
