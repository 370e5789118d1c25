//! Feature-map container, similarity, positional encodings, and the scaled
//! dot-product attention primitive.

use thiserror::Error;

use crate::autodiff::{concat_cols, matmul, matmul_nt, softmax_rows, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature map contains non-finite values")]
    NonFinite,
    #[error("feature map dimensions must all be at least 1, got {0:?}")]
    EmptyDims([usize; 4]),
    #[error("buffer of length {got} does not match dims {dims:?}")]
    BufferSize { dims: [usize; 4], got: usize },
    #[error("channel count {0} is not divisible by 4")]
    InvalidChannelCount(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// `views × height × width × channels` token grid, row-major, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    views: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        views: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        let dims = [views, height, width, channels];
        if dims.contains(&0) {
            return Err(FeatureError::EmptyDims(dims));
        }
        if data.len() != views * height * width * channels {
            return Err(FeatureError::BufferSize {
                dims,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self {
            views,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(views: usize, height: usize, width: usize, channels: usize) -> Self {
        Self::new(views, height, width, channels, vec![0.0; views * height * width * channels])
            .expect("non-empty dims")
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.views, self.height, self.width, self.channels]
    }

    pub fn views(&self) -> usize {
        self.views
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn tokens_per_view(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn offset(&self, v: usize, r: usize, c: usize) -> usize {
        ((v * self.height + r) * self.width + c) * self.channels
    }

    pub fn token(&self, v: usize, r: usize, c: usize) -> &[f64] {
        let o = self.offset(v, r, c);
        &self.data[o..o + self.channels]
    }

    pub fn view(&self, v: usize) -> ViewSlice<'_> {
        let n = self.height * self.width * self.channels;
        ViewSlice {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: &self.data[v * n..(v + 1) * n],
        }
    }

    /// Rebuilds a map from per-view buffers of identical shape.
    pub fn from_views(
        height: usize,
        width: usize,
        channels: usize,
        views: Vec<Vec<f64>>,
    ) -> Result<Self, FeatureError> {
        let n = views.len();
        Self::new(n, height, width, channels, views.concat())
    }

    /// Token matrix with one row per token, views stacked.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.views * self.height * self.width,
            self.channels,
            self.data.clone(),
        )
    }

    pub fn from_tensor(
        views: usize,
        height: usize,
        width: usize,
        t: &Tensor,
    ) -> Result<Self, FeatureError> {
        if t.rows != views * height * width {
            return Err(FeatureError::ShapeMismatch(format!(
                "tensor has {} rows, expected {}",
                t.rows,
                views * height * width
            )));
        }
        Self::new(views, height, width, t.cols, t.data.clone())
    }
}

/// Borrowed single-view token grid.
#[derive(Clone, Copy, Debug)]
pub struct ViewSlice<'a> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: &'a [f64],
}

impl<'a> ViewSlice<'a> {
    pub fn new(height: usize, width: usize, channels: usize, data: &'a [f64]) -> Result<Self, FeatureError> {
        if data.len() != height * width * channels {
            return Err(FeatureError::BufferSize {
                dims: [1, height, width, channels],
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token at row-major index `i`.
    #[inline]
    pub fn token(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &ViewSlice<'_>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// `1 − cos(u, v)`; 1.0 when either vector is (near) zero.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-12 || nv < 1e-12 {
        return 1.0;
    }
    let cos = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    (1.0 - cos).clamp(0.0, 2.0)
}

/// Whether the view-index band carries the view index or is pinned to view 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewBand {
    Enabled,
    Disabled,
}

/// Sine–cosine encoding of `(column, view)` per token.
///
/// Channels `[0, c/2)` encode the column and `[c/2, c)` the view; each half
/// is `c/4` sines followed by `c/4` cosines at geometric frequencies
/// `10000^(-k / (c/4))`. The row index is deliberately absent.
pub fn sincos_encoding(h_f: usize, w_f: usize, n_views: usize, c: usize) -> Result<FeatureMap, FeatureError> {
    sincos_encoding_with(h_f, w_f, n_views, c, ViewBand::Enabled)
}

pub fn sincos_encoding_with(
    h_f: usize,
    w_f: usize,
    n_views: usize,
    c: usize,
    view_band: ViewBand,
) -> Result<FeatureMap, FeatureError> {
    if c == 0 || c % 4 != 0 {
        return Err(FeatureError::InvalidChannelCount(c));
    }
    let q = c / 4;
    let freqs: Vec<f64> = (0..q).map(|k| 10000f64.powf(-(k as f64) / q as f64)).collect();
    let mut data = Vec::with_capacity(n_views * h_f * w_f * c);
    for v in 0..n_views {
        let vpos = match view_band {
            ViewBand::Enabled => v as f64,
            ViewBand::Disabled => 0.0,
        };
        for _r in 0..h_f {
            for col in 0..w_f {
                let cpos = col as f64;
                data.extend(freqs.iter().map(|f| (cpos * f).sin()));
                data.extend(freqs.iter().map(|f| (cpos * f).cos()));
                data.extend(freqs.iter().map(|f| (vpos * f).sin()));
                data.extend(freqs.iter().map(|f| (vpos * f).cos()));
            }
        }
    }
    FeatureMap::new(n_views, h_f, w_f, c, data)
}

/// `softmax(q kᵀ / √C) v` with `q: T×C`, `k: S×C`, `v: S×C'`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, FeatureError> {
    if q.cols != k.cols {
        return Err(FeatureError::ShapeMismatch(format!(
            "query has {} channels, key has {}",
            q.cols, k.cols
        )));
    }
    if k.rows != v.rows {
        return Err(FeatureError::ShapeMismatch(format!(
            "{} keys but {} values",
            k.rows, v.rows
        )));
    }
    let mut logits = matmul_nt(q, k);
    let scale = 1.0 / (q.cols as f64).sqrt();
    logits.data.iter_mut().for_each(|x| *x *= scale);
    Ok(matmul(&softmax_rows(&logits), v))
}

/// Column block `[start, start + len)` of a tensor.
pub fn slice_cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.rows * len);
    for r in 0..t.rows {
        data.extend_from_slice(&t.row(r)[start..start + len]);
    }
    Tensor::new(t.rows, len, data)
}

/// Splits already-projected `q`, `k`, `v` into `n_heads` column blocks,
/// attends per head, and concatenates the head outputs.
pub fn multi_head_attention(q: &Tensor, k: &Tensor, v: &Tensor, n_heads: usize) -> Result<Tensor, FeatureError> {
    if n_heads == 0 || q.cols % n_heads != 0 || v.cols % n_heads != 0 {
        return Err(FeatureError::ShapeMismatch(format!(
            "{n_heads} heads do not divide {} channels",
            q.cols
        )));
    }
    let dq = q.cols / n_heads;
    let dv = v.cols / n_heads;
    let heads = (0..n_heads)
        .map(|h| {
            scaled_dot_attention(
                &slice_cols(q, h * dq, dq),
                &slice_cols(k, h * dq, dq),
                &slice_cols(v, h * dv, dv),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Tensor::zeros(q.rows, v.cols);
    for (h, t) in heads.iter().enumerate() {
        for r in 0..q.rows {
            out.data[r * v.cols + h * dv..r * v.cols + (h + 1) * dv].copy_from_slice(t.row(r));
        }
    }
    Ok(out)
}

/// Tape version of [`multi_head_attention`].
pub fn multi_head_attention_var<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, n_heads: usize) -> Var<'t> {
    let (_, c) = q.shape();
    let (_, cv) = v.shape();
    assert!(n_heads > 0 && c % n_heads == 0 && cv % n_heads == 0, "head count must divide channels");
    let (dq, dv) = (c / n_heads, cv / n_heads);
    let heads: Vec<Var<'t>> = (0..n_heads)
        .map(|h| {
            let qh = q.slice_cols(h * dq, dq);
            let kh = k.slice_cols(h * dq, dq);
            let vh = v.slice_cols(h * dv, dv);
            qh.matmul(kh.transpose())
                .scale(1.0 / (dq as f64).sqrt())
                .softmax()
                .matmul(vh)
        })
        .collect();
    if heads.len() == 1 {
        heads[0]
    } else {
        concat_cols(&heads)
    }
}
