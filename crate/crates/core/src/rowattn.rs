//! Multi-view row attention: tokens sharing a row index across all views
//! attend to each other as one group.

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{concat_rows, layer_norm_rows, matmul, Tensor, Var};
use crate::featops::{multi_head_attention, multi_head_attention_var, FeatureError, FeatureMap};
use crate::rng::keyed_rng;

pub const DEFAULT_HEADS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RowAttentionParams {
    pub channels: usize,
    pub n_heads: usize,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub seed: u64,
}

impl RowAttentionParams {
    /// Uniform `±1/√C` initialization drawn from the keyed stream of `seed`.
    pub fn init(channels: usize, n_heads: usize, seed: u64) -> Result<Self, FeatureError> {
        if channels == 0 || n_heads == 0 || channels % n_heads != 0 {
            return Err(FeatureError::ShapeMismatch(format!(
                "{n_heads} heads do not divide {channels} channels"
            )));
        }
        let bound = 1.0 / (channels as f64).sqrt();
        let mat = |label: &str| {
            let mut rng = keyed_rng(seed, 0, label);
            Tensor::new(
                channels,
                channels,
                (0..channels * channels).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
        };
        Ok(Self {
            channels,
            n_heads,
            wq: mat("rowattn/wq"),
            wk: mat("rowattn/wk"),
            wv: mat("rowattn/wv"),
            wo: mat("rowattn/wo"),
            seed,
        })
    }

    /// Same as [`init`](Self::init) with the output projection zeroed, which
    /// makes the layer an identity map.
    pub fn init_zero_output(channels: usize, n_heads: usize, seed: u64) -> Result<Self, FeatureError> {
        let mut p = Self::init(channels, n_heads, seed)?;
        p.wo = Tensor::zeros(channels, channels);
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let c = self.channels;
        if self.n_heads == 0 || c % self.n_heads != 0 {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} heads do not divide {c} channels",
                self.n_heads
            )));
        }
        for m in [&self.wq, &self.wk, &self.wv, &self.wo] {
            if (m.rows, m.cols) != (c, c) {
                return Err(FeatureError::ShapeMismatch(format!(
                    "projection is {}x{}, expected {c}x{c}",
                    m.rows, m.cols
                )));
            }
            if !m.is_finite() {
                return Err(FeatureError::NonFinite);
            }
        }
        Ok(())
    }
}

/// Flat token indices (views stacked, row-major) belonging to row `r`,
/// ordered view-major then column.
pub fn row_group(views: usize, h_f: usize, w_f: usize, r: usize) -> Vec<usize> {
    (0..views)
        .flat_map(|v| (0..w_f).map(move |c| (v * h_f + r) * w_f + c))
        .collect()
}

fn check_shapes(f: &FeatureMap, params: &RowAttentionParams, pos: &FeatureMap) -> Result<(), FeatureError> {
    params.validate()?;
    if f.dims() != pos.dims() {
        return Err(FeatureError::ShapeMismatch(format!(
            "positional grid {:?} does not match features {:?}",
            pos.dims(),
            f.dims()
        )));
    }
    if f.channels() != params.channels {
        return Err(FeatureError::ShapeMismatch(format!(
            "features have {} channels, parameters expect {}",
            f.channels(),
            params.channels
        )));
    }
    Ok(())
}

/// Pre-norm multi-head row attention with a residual connection:
/// `x + attn(q = (n + p)Wq, k = (n + p)Wk, v = nWv) Wo` with `n = LN(x)`.
pub fn row_attention(
    f: &FeatureMap,
    params: &RowAttentionParams,
    pos: &FeatureMap,
) -> Result<FeatureMap, FeatureError> {
    check_shapes(f, params, pos)?;
    let [views, h_f, w_f, c] = f.dims();
    let rows: Vec<(Vec<usize>, Tensor)> = (0..h_f)
        .into_par_iter()
        .map(|r| {
            let idx = row_group(views, h_f, w_f, r);
            let gather = |src: &[f64]| {
                let mut d = Vec::with_capacity(idx.len() * c);
                for &i in &idx {
                    d.extend_from_slice(&src[i * c..(i + 1) * c]);
                }
                Tensor::new(idx.len(), c, d)
            };
            let x = gather(f.data());
            let p = gather(pos.data());
            let n = layer_norm_rows(&x);
            let mut np = n.clone();
            np.data.iter_mut().zip(&p.data).for_each(|(a, b)| *a += b);
            let q = matmul(&np, &params.wq);
            let k = matmul(&np, &params.wk);
            let v = matmul(&n, &params.wv);
            let a = multi_head_attention(&q, &k, &v, params.n_heads).expect("validated heads");
            let mut out = matmul(&a, &params.wo);
            out.data.iter_mut().zip(&x.data).for_each(|(o, xi)| *o += xi);
            (idx, out)
        })
        .collect();
    let mut data = vec![0.0; f.data().len()];
    for (idx, out) in rows {
        for (k, &i) in idx.iter().enumerate() {
            data[i * c..(i + 1) * c].copy_from_slice(out.row(k));
        }
    }
    FeatureMap::new(views, h_f, w_f, c, data)
}

/// Row attention on the autodiff tape. `x` holds `views·h_f·w_f` token rows
/// in [`FeatureMap`] order; `pos` is the matching positional grid.
#[allow(clippy::too_many_arguments)]
pub fn row_attention_var<'t>(
    x: Var<'t>,
    dims: (usize, usize, usize),
    pos: &Tensor,
    wq: Var<'t>,
    wk: Var<'t>,
    wv: Var<'t>,
    wo: Var<'t>,
    n_heads: usize,
) -> Var<'t> {
    let (views, h_f, w_f) = dims;
    let groups: Vec<Vec<usize>> = (0..h_f).map(|r| row_group(views, h_f, w_f, r)).collect();
    let tape_pos = |idx: &[usize]| {
        let mut d = Vec::with_capacity(idx.len() * pos.cols);
        for &i in idx {
            d.extend_from_slice(pos.row(i));
        }
        Tensor::new(idx.len(), pos.cols, d)
    };
    let mut outs = Vec::with_capacity(h_f);
    let mut order = Vec::with_capacity(views * h_f * w_f);
    for idx in &groups {
        let xg = x.gather_rows(idx);
        let n = xg.layer_norm();
        let p = x.constant(tape_pos(idx));
        let np = n.add(p);
        let q = np.matmul(wq);
        let k = np.matmul(wk);
        let v = n.matmul(wv);
        let a = multi_head_attention_var(q, k, v, n_heads);
        outs.push(xg.add(a.matmul(wo)));
        order.extend_from_slice(idx);
    }
    let stacked = concat_rows(&outs);
    let mut inverse = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        inverse[i] = k;
    }
    stacked.gather_rows(&inverse)
}

/// Attention-score element counts `(row, dense)` for a `v × h_f × w_f` grid.
/// Channel count does not enter the score matrix size.
pub fn memory_footprint_estimate(v: usize, h_f: usize, w_f: usize, _c: usize) -> (u128, u128) {
    let (v, h, w) = (v as u128, h_f as u128, w_f as u128);
    (h * (v * w) * (v * w), (v * h * w) * (v * h * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featops::{sincos_encoding, sincos_encoding_with, ViewBand};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, v: usize, h: usize, w: usize, c: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(v, h, w, c, (0..v * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identical_views_stay_identical_without_view_band() {
        let one = random_map(1, 1, 3, 4, 8);
        let data: Vec<f64> = (0..3).flat_map(|_| one.data().to_vec()).collect();
        let f = FeatureMap::new(3, 3, 4, 8, data).unwrap();
        let pos = sincos_encoding_with(3, 4, 3, 8, ViewBand::Disabled).unwrap();
        let p = RowAttentionParams::init(8, 4, 9).unwrap();
        let out = row_attention(&f, &p, &pos).unwrap();
        assert_eq!(out.view(0).data, out.view(1).data);
        assert_eq!(out.view(0).data, out.view(2).data);
    }

    #[test]
    fn single_token_closed_form() {
        let f = random_map(2, 1, 1, 1, 8);
        let pos = sincos_encoding(1, 1, 1, 8).unwrap();
        let p = RowAttentionParams::init(8, 4, 3).unwrap();
        let out = row_attention(&f, &p, &pos).unwrap();
        // independent path: LN by hand, then x + (n Wv) Wo
        let x = f.data();
        let mean = x.iter().sum::<f64>() / 8.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        let n: Vec<f64> = x.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
        let nv: Vec<f64> = (0..8).map(|j| (0..8).map(|i| n[i] * p.wv.at(i, j)).sum()).collect();
        for j in 0..8 {
            let e = x[j] + (0..8).map(|i| nv[i] * p.wo.at(i, j)).sum::<f64>();
            assert!((out.data()[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn view_permutation_equivariance() {
        let f = random_map(4, 2, 4, 4, 8);
        let pos = sincos_encoding(4, 4, 2, 8).unwrap();
        let p = RowAttentionParams::init(8, 4, 5).unwrap();
        let swap = |m: &FeatureMap| {
            FeatureMap::from_views(4, 4, 8, vec![m.view(1).data.to_vec(), m.view(0).data.to_vec()]).unwrap()
        };
        let a = swap(&row_attention(&f, &p, &pos).unwrap());
        let b = row_attention(&swap(&f), &p, &swap(&pos)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_isolated_and_zero_wo_is_identity() {
        let f = random_map(6, 2, 4, 3, 8);
        let pos = sincos_encoding(4, 3, 2, 8).unwrap();
        let p = RowAttentionParams::init(8, 2, 7).unwrap();
        let base = row_attention(&f, &p, &pos).unwrap();
        let mut d = f.data().to_vec();
        let o = f.offset(1, 2, 1);
        d[o] += 0.5;
        let g = FeatureMap::new(2, 4, 3, 8, d).unwrap();
        let pert = row_attention(&g, &p, &pos).unwrap();
        for v in 0..2 {
            for r in 0..4 {
                for c in 0..3 {
                    let same = base.token(v, r, c) == pert.token(v, r, c);
                    if r != 2 {
                        assert!(same, "row {r} changed");
                    }
                }
            }
        }
        let z = RowAttentionParams::init_zero_output(8, 2, 7).unwrap();
        assert_eq!(row_attention(&f, &z, &pos).unwrap(), f);
    }

    #[test]
    fn tape_version_matches() {
        let f = random_map(8, 2, 3, 4, 8);
        let pos = sincos_encoding(3, 4, 2, 8).unwrap();
        let p = RowAttentionParams::init(8, 4, 1).unwrap();
        let plain = row_attention(&f, &p, &pos).unwrap();
        let tape = crate::autodiff::Tape::new();
        let out = row_attention_var(
            tape.leaf(f.to_tensor()),
            (2, 3, 4),
            &pos.to_tensor(),
            tape.leaf(p.wq.clone()),
            tape.leaf(p.wk.clone()),
            tape.leaf(p.wv.clone()),
            tape.leaf(p.wo.clone()),
            4,
        );
        for (a, b) in plain.data().iter().zip(&out.value().data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn footprint_ratios() {
        let (row, dense) = memory_footprint_estimate(4, 32, 32, 64);
        assert_eq!(dense / row, 32);
        assert_eq!(dense % row, 0);
        let (row, dense) = memory_footprint_estimate(1, 7, 5, 8);
        assert_eq!(dense, row * 7);
    }

    #[test]
    fn shape_mismatch_reported() {
        let f = random_map(1, 1, 2, 2, 8);
        let pos = sincos_encoding(2, 3, 1, 8).unwrap();
        let p = RowAttentionParams::init(8, 4, 1).unwrap();
        assert!(matches!(row_attention(&f, &p, &pos), Err(FeatureError::ShapeMismatch(_))));
    }
}
