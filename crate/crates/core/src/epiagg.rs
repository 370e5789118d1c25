//! Near-view epipolar aggregation: correspondence search along epipolar
//! bands, hybrid distance/similarity weights, gathering from the two ring
//! neighbours, 0.5 fusion, and straight-through gradient routing.

use std::rc::Rc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{cosine_similarity, hybrid_weight_raw, Var};
use crate::featops::{cosine_distance, FeatureError, FeatureMap, ViewSlice};
use crate::mvgeom::{
    epipolar_band, epipolar_line, fundamental_matrix_between, line_to_token_space,
    token_center_pixel, token_stride, CameraPose, FundamentalMatrix, GeometryError,
};

/// Band half-width in token units.
pub const DEFAULT_EPS: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward pass requested before any forward pass was recorded")]
    MissingForwardRecord,
}

/// For each source token (row-major), the matched token index in the
/// neighbour view or `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrespondenceMap {
    pub h_f: usize,
    pub w_f: usize,
    pub neighbor: usize,
    pub eps: f64,
    pub targets: Vec<Option<usize>>,
    /// Token-space epipolar line of each source token, `None` when the token
    /// sits on the epipole.
    pub lines: Vec<Option<[f64; 3]>>,
}

impl CorrespondenceMap {
    pub fn target(&self, i: usize) -> Option<(usize, usize)> {
        self.targets[i].map(|j| (j / self.w_f, j % self.w_f))
    }

    pub fn valid_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// Checks that every valid target lies within `eps` of its line.
    pub fn verify(&self) -> bool {
        self.targets.iter().zip(&self.lines).all(|(t, l)| match (t, l) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(j), Some([a, b, c])) => {
                let (r, col) = (j / self.w_f, j % self.w_f);
                (a * col as f64 + b * r as f64 + c).abs() <= self.eps + 1e-12
            }
        })
    }
}

fn token_lines(f_mat: &FundamentalMatrix, h_f: usize, w_f: usize) -> Vec<Option<[f64; 3]>> {
    let sa = token_stride(f_mat.size_a, h_f, w_f);
    let sb = token_stride(f_mat.size_b, h_f, w_f);
    (0..h_f * w_f)
        .map(|i| {
            let px = token_center_pixel(i / w_f, i % w_f, sa);
            epipolar_line(f_mat, px).ok().map(|l| line_to_token_space(l, sb))
        })
        .collect()
}

/// Per source token of `f_v`, the band token of `f_k` with the smallest
/// cosine distance; ties go to the lowest row-major index.
pub fn correspondence_map(
    f_v: ViewSlice<'_>,
    f_k: ViewSlice<'_>,
    f_mat: &FundamentalMatrix,
    eps: f64,
) -> Result<CorrespondenceMap, AggregationError> {
    if !f_v.same_shape(&f_k) {
        return Err(AggregationError::ShapeMismatch(format!(
            "source {}x{}x{} vs neighbour {}x{}x{}",
            f_v.height, f_v.width, f_v.channels, f_k.height, f_k.width, f_k.channels
        )));
    }
    if !(eps > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("eps must be positive, got {eps}")).into());
    }
    let (h_f, w_f) = (f_v.height, f_v.width);
    let lines = token_lines(f_mat, h_f, w_f);
    let targets = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let line = (*line)?;
            let src = f_v.token(i);
            let mut best: Option<(usize, f64)> = None;
            for (r, c) in epipolar_band(line, h_f, w_f, eps) {
                let j = r * w_f + c;
                let d = cosine_distance(src, f_k.token(j));
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect();
    Ok(CorrespondenceMap {
        h_f,
        w_f,
        neighbor: f_mat.view_b,
        eps,
        targets,
        lines,
    })
}

/// Ring predecessor and successor of view `v` among `n` views.
pub fn ring_neighbors(n: usize, v: usize) -> (usize, usize) {
    ((v + n - 1) % n, (v + 1) % n)
}

/// `d(v, next) / (d(v, prev) + d(v, next))` over Euclidean camera-center distances.
pub fn geometric_weight(poses: &[CameraPose], v: usize) -> Result<f64, GeometryError> {
    if poses.len() < 2 || v >= poses.len() {
        return Err(GeometryError::InvalidArgument(format!(
            "view {v} has no ring neighbours among {} poses",
            poses.len()
        )));
    }
    let (p, n) = ring_neighbors(poses.len(), v);
    let d_prev = (poses[v].center - poses[p].center).norm();
    let d_next = (poses[v].center - poses[n].center).norm();
    geometric_weight_from_distances(d_prev, d_next)
}

pub fn geometric_weight_from_distances(d_prev: f64, d_next: f64) -> Result<f64, GeometryError> {
    let s = d_prev + d_next;
    if !(s > 0.0) {
        return Err(GeometryError::DegenerateCameraPair { baseline: 0.0 });
    }
    Ok(d_next / s)
}

/// Similarity-adjusted neighbour weight; similarities are clamped to `[0, 1]`
/// and a vanishing denominator falls back to `w_d`.
pub fn hybrid_weight(w_d: f64, s_prev: f64, s_next: f64) -> f64 {
    hybrid_weight_raw(w_d, s_prev.clamp(0.0, 1.0), s_next.clamp(0.0, 1.0)).unwrap_or(w_d)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HybridWeightField {
    pub h_f: usize,
    pub w_f: usize,
    pub w_d: f64,
    pub w: Vec<f64>,
    pub s_prev: Vec<f64>,
    pub s_next: Vec<f64>,
}

/// Weights for every token of `f_v` from its matched neighbours. Tokens with
/// one missing side get weight 1 (prev only) or 0 (next only).
pub fn hybrid_weight_field(
    f_v: ViewSlice<'_>,
    f_prev: ViewSlice<'_>,
    f_next: ViewSlice<'_>,
    m_prev: &CorrespondenceMap,
    m_next: &CorrespondenceMap,
    w_d: f64,
) -> HybridWeightField {
    let n = f_v.len();
    let mut w = Vec::with_capacity(n);
    let mut s_prev = Vec::with_capacity(n);
    let mut s_next = Vec::with_capacity(n);
    for i in 0..n {
        let sp = m_prev.targets[i].map_or(0.0, |j| cosine_similarity(f_v.token(i), f_prev.token(j)));
        let sn = m_next.targets[i].map_or(0.0, |j| cosine_similarity(f_v.token(i), f_next.token(j)));
        s_prev.push(sp);
        s_next.push(sn);
        w.push(match (m_prev.targets[i], m_next.targets[i]) {
            (Some(_), Some(_)) => hybrid_weight(w_d, sp, sn),
            (Some(_), None) => 1.0,
            (None, Some(_)) => 0.0,
            (None, None) => w_d,
        });
    }
    HybridWeightField {
        h_f: f_v.height,
        w_f: f_v.width,
        w_d,
        w,
        s_prev,
        s_next,
    }
}

/// Aggregated neighbour features; fallback tokens (no match on either side)
/// carry zeros and must be replaced by the consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedView {
    pub h_f: usize,
    pub w_f: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub fallback: Vec<bool>,
}

pub fn aggregate(
    f_prev: ViewSlice<'_>,
    f_next: ViewSlice<'_>,
    m_prev: &CorrespondenceMap,
    m_next: &CorrespondenceMap,
    w: &HybridWeightField,
) -> Result<AggregatedView, AggregationError> {
    let n = f_prev.len();
    if !f_prev.same_shape(&f_next)
        || m_prev.targets.len() != n
        || m_next.targets.len() != n
        || w.w.len() != n
    {
        return Err(AggregationError::ShapeMismatch(
            "neighbour slices, correspondence maps and weights disagree in size".into(),
        ));
    }
    let c = f_prev.channels;
    let mut data = vec![0.0; n * c];
    let mut fallback = vec![false; n];
    for i in 0..n {
        let out = &mut data[i * c..(i + 1) * c];
        match (m_prev.targets[i], m_next.targets[i]) {
            (Some(p), Some(q)) => {
                let wi = w.w[i];
                for ((o, a), b) in out.iter_mut().zip(f_prev.token(p)).zip(f_next.token(q)) {
                    *o = wi * a + (1.0 - wi) * b;
                }
            }
            (Some(p), None) => out.copy_from_slice(f_prev.token(p)),
            (None, Some(q)) => out.copy_from_slice(f_next.token(q)),
            (None, None) => fallback[i] = true,
        }
    }
    Ok(AggregatedView {
        h_f: f_prev.height,
        w_f: f_prev.width,
        channels: c,
        data,
        fallback,
    })
}

/// `0.5·f_v + 0.5·f̃_v` elementwise.
pub fn fuse(f_v: &[f64], f_tilde: &[f64]) -> Result<Vec<f64>, AggregationError> {
    if f_v.len() != f_tilde.len() {
        return Err(AggregationError::ShapeMismatch(format!(
            "fuse inputs have {} and {} values",
            f_v.len(),
            f_tilde.len()
        )));
    }
    Ok(f_v.iter().zip(f_tilde).map(|(a, b)| 0.5 * a + 0.5 * b).collect())
}

/// Fusion that passes `f_v` through on fallback tokens.
pub fn fuse_aggregated(f_v: ViewSlice<'_>, agg: &AggregatedView) -> Result<Vec<f64>, AggregationError> {
    let mut out = fuse(f_v.data, &agg.data)?;
    let c = agg.channels;
    for (i, &fb) in agg.fallback.iter().enumerate() {
        if fb {
            out[i * c..(i + 1) * c].copy_from_slice(f_v.token(i));
        }
    }
    Ok(out)
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardRecord {
    pub h_f: usize,
    pub w_f: usize,
    pub channels: usize,
    pub f_v: Vec<f64>,
    pub f_prev: Vec<f64>,
    pub f_next: Vec<f64>,
    pub m_prev: Vec<Option<usize>>,
    pub m_next: Vec<Option<usize>>,
    pub weights: HybridWeightField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteGradients {
    pub f_v: Vec<f64>,
    pub f_prev: Vec<f64>,
    pub f_next: Vec<f64>,
    /// Gradient with respect to the raw (pre-clamp) matched similarities.
    pub s_prev: Vec<f64>,
    pub s_next: Vec<f64>,
}

/// Single-view aggregation layer that keeps its forward record for
/// straight-through backpropagation.
#[derive(Default)]
pub struct NearViewAggregator {
    record: Option<ForwardRecord>,
}

impl NearViewAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) -> Option<&ForwardRecord> {
        self.record.as_ref()
    }

    /// Matches, weights, aggregates and fuses. `f_mat_prev` and `f_mat_next`
    /// map view `v` into its predecessor and successor.
    pub fn forward(
        &mut self,
        f_v: ViewSlice<'_>,
        f_prev: ViewSlice<'_>,
        f_next: ViewSlice<'_>,
        f_mat_prev: &FundamentalMatrix,
        f_mat_next: &FundamentalMatrix,
        w_d: f64,
        eps: f64,
    ) -> Result<Vec<f64>, AggregationError> {
        let m_prev = correspondence_map(f_v, f_prev, f_mat_prev, eps)?;
        let m_next = correspondence_map(f_v, f_next, f_mat_next, eps)?;
        self.forward_with_maps(f_v, f_prev, f_next, &m_prev, &m_next, w_d)
    }

    pub fn forward_with_maps(
        &mut self,
        f_v: ViewSlice<'_>,
        f_prev: ViewSlice<'_>,
        f_next: ViewSlice<'_>,
        m_prev: &CorrespondenceMap,
        m_next: &CorrespondenceMap,
        w_d: f64,
    ) -> Result<Vec<f64>, AggregationError> {
        if !f_v.same_shape(&f_prev) {
            return Err(AggregationError::ShapeMismatch("f_v and f_prev differ in shape".into()));
        }
        let weights = hybrid_weight_field(f_v, f_prev, f_next, m_prev, m_next, w_d);
        let agg = aggregate(f_prev, f_next, m_prev, m_next, &weights)?;
        let out = fuse_aggregated(f_v, &agg)?;
        self.record = Some(ForwardRecord {
            h_f: f_v.height,
            w_f: f_v.width,
            channels: f_v.channels,
            f_v: f_v.data.to_vec(),
            f_prev: f_prev.data.to_vec(),
            f_next: f_next.data.to_vec(),
            m_prev: m_prev.targets.clone(),
            m_next: m_next.targets.clone(),
            weights,
        });
        Ok(out)
    }

    /// Gradients of a loss with respect to the layer inputs given its
    /// gradient `upstream` with respect to the fused output. Match indices
    /// are constants; the weights' dependence on similarities is kept.
    pub fn ste_backward(&self, upstream: &[f64]) -> Result<SteGradients, AggregationError> {
        let rec = self.record.as_ref().ok_or(AggregationError::MissingForwardRecord)?;
        let c = rec.channels;
        let n = rec.h_f * rec.w_f;
        if upstream.len() != n * c {
            return Err(AggregationError::ShapeMismatch(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                n * c
            )));
        }
        let mut g = SteGradients {
            f_v: vec![0.0; n * c],
            f_prev: vec![0.0; n * c],
            f_next: vec![0.0; n * c],
            s_prev: vec![0.0; n],
            s_next: vec![0.0; n],
        };
        let tok = |buf: &[f64], i: usize| -> Vec<f64> { buf[i * c..(i + 1) * c].to_vec() };
        for i in 0..n {
            let gi = &upstream[i * c..(i + 1) * c];
            match (rec.m_prev[i], rec.m_next[i]) {
                (None, None) => {
                    add_into(&mut g.f_v[i * c..(i + 1) * c], gi, 1.0);
                }
                (Some(p), None) => {
                    add_into(&mut g.f_v[i * c..(i + 1) * c], gi, 0.5);
                    add_into(&mut g.f_prev[p * c..(p + 1) * c], gi, 0.5);
                }
                (None, Some(q)) => {
                    add_into(&mut g.f_v[i * c..(i + 1) * c], gi, 0.5);
                    add_into(&mut g.f_next[q * c..(q + 1) * c], gi, 0.5);
                }
                (Some(p), Some(q)) => {
                    let w = rec.weights.w[i];
                    let a = tok(&rec.f_prev, p);
                    let b = tok(&rec.f_next, q);
                    let u = tok(&rec.f_v, i);
                    add_into(&mut g.f_v[i * c..(i + 1) * c], gi, 0.5);
                    add_into(&mut g.f_prev[p * c..(p + 1) * c], gi, 0.5 * w);
                    add_into(&mut g.f_next[q * c..(q + 1) * c], gi, 0.5 * (1.0 - w));
                    let dw: f64 = (0..c).map(|k| 0.5 * gi[k] * (a[k] - b[k])).sum();
                    let (dsp, dsn) = hybrid_grad(
                        rec.weights.w_d,
                        rec.weights.s_prev[i],
                        rec.weights.s_next[i],
                        dw,
                    );
                    g.s_prev[i] = dsp;
                    g.s_next[i] = dsn;
                    let (du_p, da) = cosine_grad(&u, &a, dsp);
                    let (du_n, db) = cosine_grad(&u, &b, dsn);
                    add_into(&mut g.f_v[i * c..(i + 1) * c], &du_p, 1.0);
                    add_into(&mut g.f_v[i * c..(i + 1) * c], &du_n, 1.0);
                    add_into(&mut g.f_prev[p * c..(p + 1) * c], &da, 1.0);
                    add_into(&mut g.f_next[q * c..(q + 1) * c], &db, 1.0);
                }
            }
        }
        Ok(g)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Gradients with respect to the raw similarities of `hybrid_weight`, scaled by `dw`.
fn hybrid_grad(w_d: f64, sp_raw: f64, sn_raw: f64, dw: f64) -> (f64, f64) {
    let sp = sp_raw.clamp(0.0, 1.0);
    let sn = sn_raw.clamp(0.0, 1.0);
    let den = sp * w_d + (1.0 - w_d) * sn;
    if den < 1e-12 {
        return (0.0, 0.0);
    }
    let inside = |s: f64| if (0.0..=1.0).contains(&s) { 1.0 } else { 0.0 };
    let k = w_d * (1.0 - w_d) / (den * den);
    (dw * k * sn * inside(sp_raw), -dw * k * sp * inside(sn_raw))
}

/// `(∂cos/∂u, ∂cos/∂v)` scaled by `d`; zero when either norm vanishes.
fn cosine_grad(u: &[f64], v: &[f64], d: f64) -> (Vec<f64>, Vec<f64>) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 || d == 0.0 {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cos = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    let gu = u.iter().zip(v).map(|(a, b)| d * (b / (nu * nv) - cos * a / (nu * nu))).collect();
    let gv = u.iter().zip(v).map(|(a, b)| d * (a / (nu * nv) - cos * b / (nv * nv))).collect();
    (gu, gv)
}

/// Per-token routing for a whole multi-view map, built from forward values
/// and replayed on the autodiff tape.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationPlan {
    pub views: usize,
    pub h_f: usize,
    pub w_f: usize,
    pub prev: Vec<Option<usize>>,
    pub next: Vec<Option<usize>>,
    pub w_d: Vec<f64>,
}

impl AggregationPlan {
    pub fn fallback_count(&self) -> usize {
        self.prev.iter().zip(&self.next).filter(|(p, n)| p.is_none() && n.is_none()).count()
    }
}

/// Fundamental matrices from every view into its ring predecessor and successor.
pub fn ring_fundamentals(poses: &[CameraPose]) -> Result<Vec<(FundamentalMatrix, FundamentalMatrix)>, GeometryError> {
    let n = poses.len();
    (0..n)
        .map(|v| {
            let (p, q) = ring_neighbors(n, v);
            Ok((
                fundamental_matrix_between(v, &poses[v], p, &poses[p])?,
                fundamental_matrix_between(v, &poses[v], q, &poses[q])?,
            ))
        })
        .collect()
}

/// Correspondence search for every view of `f` against its ring neighbours.
/// Flat indices address tokens of the whole map.
pub fn plan_aggregation(
    f: &FeatureMap,
    fundamentals: &[(FundamentalMatrix, FundamentalMatrix)],
    w_d: &[f64],
    eps: f64,
) -> Result<AggregationPlan, AggregationError> {
    let [views, h_f, w_f, _] = f.dims();
    if fundamentals.len() != views || w_d.len() != views {
        return Err(AggregationError::ShapeMismatch(format!(
            "{views} views but {} camera pairs and {} distance weights",
            fundamentals.len(),
            w_d.len()
        )));
    }
    let per_view = h_f * w_f;
    let mut prev = Vec::with_capacity(views * per_view);
    let mut next = Vec::with_capacity(views * per_view);
    let mut wd = Vec::with_capacity(views * per_view);
    for v in 0..views {
        let (fp, fnx) = &fundamentals[v];
        let mp = correspondence_map(f.view(v), f.view(fp.view_b), fp, eps)?;
        let mn = correspondence_map(f.view(v), f.view(fnx.view_b), fnx, eps)?;
        prev.extend(mp.targets.iter().map(|t| t.map(|j| fp.view_b * per_view + j)));
        next.extend(mn.targets.iter().map(|t| t.map(|j| fnx.view_b * per_view + j)));
        wd.extend(std::iter::repeat(w_d[v]).take(per_view));
    }
    Ok(AggregationPlan {
        views,
        h_f,
        w_f,
        prev,
        next,
        w_d: wd,
    })
}

/// Tape version of aggregate-and-fuse for every token of `x`
/// (`views·h_f·w_f × C`), following a precomputed plan.
pub fn aggregate_fuse_var<'t>(x: Var<'t>, plan: &AggregationPlan) -> Var<'t> {
    let n = plan.prev.len();
    let prev_idx: Vec<usize> = (0..n).map(|i| plan.prev[i].unwrap_or(i)).collect();
    let next_idx: Vec<usize> = (0..n).map(|i| plan.next[i].unwrap_or(i)).collect();
    let fixed: Vec<Option<f64>> = (0..n)
        .map(|i| match (plan.prev[i], plan.next[i]) {
            (Some(_), Some(_)) => None,
            (Some(_), None) => Some(1.0),
            (None, Some(_)) => Some(0.0),
            (None, None) => Some(0.5),
        })
        .collect();
    let a = x.gather_rows(&prev_idx);
    let b = x.gather_rows(&next_idx);
    let sp = x.row_cosine(a).clamp(0.0, 1.0);
    let sn = x.row_cosine(b).clamp(0.0, 1.0);
    let w = sp.hybrid_weight(sn, Rc::from(plan.w_d.as_slice()), Rc::from(fixed));
    let agg = a.mul_col(w).add(b.mul_col(w.affine(-1.0, 1.0)));
    x.scale(0.5).add(agg.scale(0.5))
}

/// Plain-value counterpart of [`aggregate_fuse_var`].
pub fn aggregate_fuse_map(f: &FeatureMap, plan: &AggregationPlan) -> Result<FeatureMap, AggregationError> {
    let [views, h_f, w_f, c] = f.dims();
    let d = f.data();
    let mut out = Vec::with_capacity(d.len());
    for i in 0..views * h_f * w_f {
        let u = &d[i * c..(i + 1) * c];
        let tok = |j: usize| &d[j * c..(j + 1) * c];
        match (plan.prev[i], plan.next[i]) {
            (None, None) => out.extend_from_slice(u),
            (Some(p), None) => out.extend(u.iter().zip(tok(p)).map(|(x, a)| 0.5 * x + 0.5 * a)),
            (None, Some(q)) => out.extend(u.iter().zip(tok(q)).map(|(x, b)| 0.5 * x + 0.5 * b)),
            (Some(p), Some(q)) => {
                let w = hybrid_weight(
                    plan.w_d[i],
                    cosine_similarity(u, tok(p)),
                    cosine_similarity(u, tok(q)),
                );
                out.extend(
                    u.iter()
                        .zip(tok(p))
                        .zip(tok(q))
                        .map(|((x, a), b)| 0.5 * x + 0.5 * (w * a + (1.0 - w) * b)),
                );
            }
        }
    }
    Ok(FeatureMap::new(views, h_f, w_f, c, out)?)
}
