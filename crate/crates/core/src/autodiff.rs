//! Dense 2-D tensors and a small reverse-mode autodiff tape.
//!
//! The tape records one node per operation; [`Tape::backward`] walks it in
//! reverse. Discrete choices (argmin routing, validity masks) are made outside
//! the tape from forward values and enter only as constant indices, which is
//! exactly straight-through routing.

use std::cell::RefCell;
use std::rc::Rc;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor buffer size");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dims");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let ar = a.row(k);
        let br = b.row(k);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization to zero mean and unit variance, no affine terms.
pub fn layer_norm_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = x.cols as f64;
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Cosine similarity with the zero-norm guard used throughout (returns 0).
#[inline]
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Hybrid near-view weight; `None` when the denominator guard fires.
#[inline]
pub fn hybrid_weight_raw(w_d: f64, s_prev: f64, s_next: f64) -> Option<f64> {
    let den = s_prev * w_d + (1.0 - w_d) * s_next;
    if den < 1e-12 {
        None
    } else {
        Some(s_prev * w_d / den)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Affine(usize, f64),
    Silu(usize),
    LayerNorm(usize),
    Softmax(usize),
    Gather(usize, Rc<[usize]>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    RowCosine(usize, usize),
    Clamp(usize, f64, f64),
    Hybrid {
        sp: usize,
        sn: usize,
        wd: Rc<[f64]>,
        fixed: Rc<[Option<f64>]>,
    },
    Sum(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            (nodes[loss.id].value.rows, nodes[loss.id].value.cols),
            (1, 1),
            "backward needs a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(t) => {
                    for (a, b) in t.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    acc(&mut grads, *a, matmul_nt(&g, bv));
                    acc(&mut grads, *b, matmul_tn(av, &g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    let mut neg = g.clone();
                    neg.data.iter_mut().for_each(|v| *v = -*v);
                    acc(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let ga = Tensor::new(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&bv.data).map(|(d, b)| d * b).collect(),
                    );
                    let gb = Tensor::new(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&av.data).map(|(d, a)| d * a).collect(),
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (s, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *bias, gb);
                }
                Op::MulCol(a, s) => {
                    let av = &nodes[*a].value;
                    let sv = &nodes[*s].value;
                    let mut ga = g.clone();
                    let mut gs = Tensor::zeros(g.rows, 1);
                    for r in 0..g.rows {
                        let k = sv.data[r];
                        let mut dot = 0.0;
                        for c in 0..g.cols {
                            let i = r * g.cols + c;
                            ga.data[i] = g.data[i] * k;
                            dot += g.data[i] * av.data[i];
                        }
                        gs.data[r] = dot;
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, gs);
                }
                Op::Affine(a, k) => {
                    let mut ga = g.clone();
                    ga.data.iter_mut().for_each(|v| *v *= k);
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let xv = &nodes[*a].value;
                    let ga = Tensor::new(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&xv.data)
                            .map(|(d, &x)| {
                                let s = sigmoid(x);
                                d * s * (1.0 + x * (1.0 - s))
                            })
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let xv = &nodes[*a].value;
                    let n = xv.cols as f64;
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let xr = xv.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mg = gr.iter().sum::<f64>() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..g.cols {
                            ga.data[r * g.cols + c] = inv * (gr[c] - mg - yr[c] * mgy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols {
                            ga.data[r * g.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(src, idx) => {
                    let sv = &nodes[*src].value;
                    let mut gs = Tensor::zeros(sv.rows, sv.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        gs.data[i] += g.data[k];
                    }
                    acc(&mut grads, *src, gs);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = nodes[p].value.cols;
                        let mut gp = Tensor::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            gp.data[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + pc]);
                        }
                        acc(&mut grads, p, gp);
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pr = nodes[p].value.rows;
                        let gp = Tensor::new(
                            pr,
                            g.cols,
                            g.data[off * g.cols..(off + pr) * g.cols].to_vec(),
                        );
                        acc(&mut grads, p, gp);
                        off += pr;
                    }
                }
                Op::RowCosine(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    let mut gb = Tensor::zeros(bv.rows, bv.cols);
                    for r in 0..av.rows {
                        let (ar, br) = (av.row(r), bv.row(r));
                        let na = ar.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let nb = br.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if na < 1e-12 || nb < 1e-12 {
                            continue;
                        }
                        let cos = y.data[r];
                        let d = g.data[r];
                        for c in 0..av.cols {
                            let i = r * av.cols + c;
                            ga.data[i] = d * (br[c] / (na * nb) - cos * ar[c] / (na * na));
                            gb.data[i] = d * (ar[c] / (na * nb) - cos * br[c] / (nb * nb));
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Clamp(a, lo, hi) => {
                    let xv = &nodes[*a].value;
                    let ga = Tensor::new(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&xv.data)
                            .map(|(d, &x)| if x >= *lo && x <= *hi { *d } else { 0.0 })
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Hybrid { sp, sn, wd, fixed } => {
                    let spv = &nodes[*sp].value;
                    let snv = &nodes[*sn].value;
                    let mut gp = Tensor::zeros(spv.rows, 1);
                    let mut gn = Tensor::zeros(snv.rows, 1);
                    for r in 0..spv.rows {
                        if fixed[r].is_some() {
                            continue;
                        }
                        let (p, n, w) = (spv.data[r], snv.data[r], wd[r]);
                        let den = p * w + (1.0 - w) * n;
                        if den < 1e-12 {
                            continue;
                        }
                        let d = g.data[r];
                        gp.data[r] = d * w * (1.0 - w) * n / (den * den);
                        gn.data[r] = -d * p * w * (1.0 - w) / (den * den);
                    }
                    acc(&mut grads, *sp, gp);
                    acc(&mut grads, *sn, gn);
                }
                Op::Sum(a) => {
                    let av = &nodes[*a].value;
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(av.rows, av.cols, vec![g.data[0]; av.rows * av.cols]),
                    );
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    pub fn get_id(&self, id: usize) -> Option<&Tensor> {
        self.grads[id].as_ref()
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "elementwise shapes");
    Tensor::new(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    )
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    /// New leaf on the same tape.
    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.leaf(t)
    }

    pub fn shape(&self) -> (usize, usize) {
        let v = self.value();
        (v.rows, v.cols)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = matmul(&self.value(), &other.value());
        self.tape.push(v, Op::MatMul(self.id, other.id))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = elementwise(&self.value(), &other.value(), |a, b| a + b);
        self.tape.push(v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = elementwise(&self.value(), &other.value(), |a, b| a - b);
        self.tape.push(v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = elementwise(&self.value(), &other.value(), |a, b| a * b);
        self.tape.push(v, Op::Mul(self.id, other.id))
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = bias.value();
        assert_eq!((b.rows, b.cols), (1, a.cols), "bias shape");
        let mut out = (*a).clone();
        for r in 0..a.rows {
            for (o, bv) in out.data[r * a.cols..(r + 1) * a.cols].iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.tape.push(out, Op::AddRow(self.id, bias.id))
    }

    /// Scales row `r` by `s[r]` where `s` is `rows × 1`.
    pub fn mul_col(self, s: Var<'t>) -> Var<'t> {
        let a = self.value();
        let sv = s.value();
        assert_eq!((sv.rows, sv.cols), (a.rows, 1), "column scale shape");
        let mut out = (*a).clone();
        for r in 0..a.rows {
            let k = sv.data[r];
            out.data[r * a.cols..(r + 1) * a.cols]
                .iter_mut()
                .for_each(|v| *v *= k);
        }
        self.tape.push(out, Op::MulCol(self.id, s.id))
    }

    /// `k · x + b` elementwise.
    pub fn affine(self, k: f64, b: f64) -> Var<'t> {
        let mut out = (*self.value()).clone();
        out.data.iter_mut().for_each(|v| *v = k * *v + b);
        self.tape.push(out, Op::Affine(self.id, k))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let mut out = (*self.value()).clone();
        out.data.iter_mut().for_each(|v| *v *= k);
        self.tape.push(out, Op::Affine(self.id, k))
    }

    pub fn silu(self) -> Var<'t> {
        let mut out = (*self.value()).clone();
        out.data.iter_mut().for_each(|v| *v = silu(*v));
        self.tape.push(out, Op::Silu(self.id))
    }

    pub fn layer_norm(self) -> Var<'t> {
        let v = layer_norm_rows(&self.value());
        self.tape.push(v, Op::LayerNorm(self.id))
    }

    pub fn softmax(self) -> Var<'t> {
        let v = softmax_rows(&self.value());
        self.tape.push(v, Op::Softmax(self.id))
    }

    /// Flat element gather: `out.data[k] = self.data[idx[k]]`.
    pub fn gather(self, idx: Rc<[usize]>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(idx.len(), rows * cols, "gather output size");
        let src = self.value();
        let out = Tensor::new(rows, cols, idx.iter().map(|&i| src.data[i]).collect());
        self.tape.push(out, Op::Gather(self.id, idx))
    }

    pub fn gather_rows(self, rows: &[usize]) -> Var<'t> {
        let cols = self.value().cols;
        let idx: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (r * cols)..(r * cols + cols))
            .collect();
        self.gather(idx.into(), rows.len(), cols)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let (rows, cols) = self.shape();
        let idx: Vec<usize> = (0..rows)
            .flat_map(|r| (r * cols + start)..(r * cols + start + len))
            .collect();
        self.gather(idx.into(), rows, len)
    }

    pub fn transpose(self) -> Var<'t> {
        let (rows, cols) = self.shape();
        let idx: Vec<usize> = (0..cols)
            .flat_map(|c| (0..rows).map(move |r| r * cols + c))
            .collect();
        self.gather(idx.into(), cols, rows)
    }

    pub fn row_cosine(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "row cosine shapes");
        let out = Tensor::new(
            a.rows,
            1,
            (0..a.rows).map(|r| cosine_similarity(a.row(r), b.row(r))).collect(),
        );
        self.tape.push(out, Op::RowCosine(self.id, other.id))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let mut out = (*self.value()).clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        self.tape.push(out, Op::Clamp(self.id, lo, hi))
    }

    /// Per-row hybrid near-view weight; `fixed[r]` overrides the formula.
    pub fn hybrid_weight(
        self,
        s_next: Var<'t>,
        w_d: Rc<[f64]>,
        fixed: Rc<[Option<f64>]>,
    ) -> Var<'t> {
        let sp = self.value();
        let sn = s_next.value();
        let out = Tensor::new(
            sp.rows,
            1,
            (0..sp.rows)
                .map(|r| match fixed[r] {
                    Some(v) => v,
                    None => hybrid_weight_raw(w_d[r], sp.data[r], sn.data[r]).unwrap_or(w_d[r]),
                })
                .collect(),
        );
        self.tape.push(
            out,
            Op::Hybrid {
                sp: self.id,
                sn: s_next.id,
                wd: w_d,
                fixed,
            },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data.iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = {
            let v = self.value();
            (v.rows * v.cols) as f64
        };
        self.sum().scale(1.0 / n)
    }
}

pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let tape = parts[0].tape;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let rows = vals[0].rows;
    let cols: usize = vals.iter().map(|v| v.cols).sum();
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let mut off = 0;
        for v in &vals {
            assert_eq!(v.rows, rows, "concat_cols rows");
            out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
            off += v.cols;
        }
    }
    tape.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let tape = parts[0].tape;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let cols = vals[0].cols;
    let mut data = Vec::new();
    let mut rows = 0;
    for v in &vals {
        assert_eq!(v.cols, cols, "concat_rows cols");
        data.extend_from_slice(&v.data);
        rows += v.rows;
    }
    tape.push(
        Tensor::new(rows, cols, data),
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check<F>(inputs: Vec<Tensor>, build: F)
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
    {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss);
        let h = 1e-5;
        for (k, inp) in inputs.iter().enumerate() {
            let g = grads.get(vars[k]).cloned().unwrap_or(Tensor::zeros(inp.rows, inp.cols));
            for i in 0..inp.data.len() {
                let eval = |delta: f64| {
                    let t2 = Tape::new();
                    let mut ins = inputs.clone();
                    ins[k].data[i] += delta;
                    let vs: Vec<Var> = ins.iter().map(|t| t2.leaf(t.clone())).collect();
                    build(&t2, &vs).value().data[0]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.data[i];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs().max(an.abs())),
                    "input {k} elem {i}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, 5, 4);
        let wq = rand_tensor(&mut rng, 4, 4);
        let wv = rand_tensor(&mut rng, 4, 4);
        let bias = rand_tensor(&mut rng, 1, 4);
        check(vec![x, wq, wv, bias], |_, v| {
            let n = v[0].layer_norm();
            let q = n.matmul(v[1]);
            let s = q.matmul(q.transpose()).scale(0.5).softmax();
            let o = s.matmul(n.matmul(v[2])).add_row(v[3]).silu();
            o.mul(o).mean()
        });
    }

    #[test]
    fn gather_concat_cosine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 4, 3);
        check(vec![a, b], |_, v| {
            let g = v[1].gather_rows(&[3, 0, 0, 2]);
            let cos = v[0].row_cosine(g);
            let cat = concat_cols(&[v[0].slice_cols(1, 2), g]);
            let rows = concat_rows(&[cat, cat.scale(-0.5)]);
            rows.sum().add(cos.mul(cos).sum())
        });
    }

    #[test]
    fn hybrid_and_mulcol_gradients() {
        let sp = Tensor::new(3, 1, vec![0.7, 0.2, 0.9]);
        let sn = Tensor::new(3, 1, vec![0.4, 0.8, 0.3]);
        let f = Tensor::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.3, -0.7]);
        check(vec![sp, sn, f], |_, v| {
            let w = v[0].clamp(0.0, 1.0).hybrid_weight(
                v[1],
                vec![0.5, 0.3, 0.6].into(),
                vec![None, None, Some(1.0)].into(),
            );
            let one_minus = w.affine(-1.0, 1.0);
            v[2].mul_col(w).add(v[2].mul_col(one_minus).scale(0.3)).sum()
        });
    }
}
