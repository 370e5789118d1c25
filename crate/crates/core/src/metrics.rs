//! PSNR, SSIM and wavelet color correction.

use thiserror::Error;

use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_WAVELET_LEVELS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn check(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// `10·log10(1/MSE)`, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Rec. 601 luma.
pub fn to_gray(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window (σ = 1.5) over
/// the valid region. Images smaller than the window use the largest odd
/// window that fits.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let (ga, gb) = (to_gray(a), to_gray(b));
    let (ow, oh) = (w - size + 1, h - size + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..size {
                for i in 0..size {
                    let wgt = k[j] * k[i];
                    let idx = (y + j) * w + x + i;
                    let (p, q) = (ga[idx], gb[idx]);
                    ma += wgt * p;
                    mb += wgt * q;
                    saa += wgt * (p * p);
                    sbb += wgt * (q * q);
                    sab += wgt * (p * q);
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// One Haar level: detail bands and the size of the plane they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarLevel {
    pub width: usize,
    pub height: usize,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

/// Orthonormal multi-level Haar decomposition of one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarPyramid {
    pub levels: Vec<HaarLevel>,
    pub ll: Vec<f64>,
    pub ll_width: usize,
    pub ll_height: usize,
}

impl HaarPyramid {
    pub fn detail_energy(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.lh.iter().chain(&l.hl).chain(&l.hh))
            .map(|v| v * v)
            .sum()
    }
}

/// Odd sizes are edge-padded to even before each level.
pub fn haar_decompose(plane: &[f64], width: usize, height: usize, levels: usize) -> HaarPyramid {
    let mut cur = plane.to_vec();
    let (mut w, mut h) = (width, height);
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
        let at = |x: usize, y: usize| cur[y.min(h - 1) * w + x.min(w - 1)];
        let n = w2 * h2;
        let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for y in 0..h2 {
            for x in 0..w2 {
                let (a, b) = (at(2 * x, 2 * y), at(2 * x + 1, 2 * y));
                let (c, d) = (at(2 * x, 2 * y + 1), at(2 * x + 1, 2 * y + 1));
                let i = y * w2 + x;
                ll[i] = (a + b + c + d) / 2.0;
                lh[i] = (a - b + c - d) / 2.0;
                hl[i] = (a + b - c - d) / 2.0;
                hh[i] = (a - b - c + d) / 2.0;
            }
        }
        out.push(HaarLevel {
            width: w,
            height: h,
            lh,
            hl,
            hh,
        });
        cur = ll;
        w = w2;
        h = h2;
    }
    HaarPyramid {
        levels: out,
        ll: cur,
        ll_width: w,
        ll_height: h,
    }
}

pub fn haar_reconstruct(p: &HaarPyramid) -> Vec<f64> {
    let mut cur = p.ll.clone();
    for lvl in p.levels.iter().rev() {
        let (w, h) = (lvl.width, lvl.height);
        let w2 = w.div_ceil(2);
        let mut next = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = (y / 2) * w2 + x / 2;
                let (s, t) = (if x % 2 == 0 { 1.0 } else { -1.0 }, if y % 2 == 0 { 1.0 } else { -1.0 });
                next[y * w + x] = (cur[i] + s * lvl.lh[i] + t * lvl.hl[i] + s * t * lvl.hh[i]) / 2.0;
            }
        }
        cur = next;
    }
    cur
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.chunks_exact(3).map(|p| p[c]).collect()
}

/// Replaces the coarsest Haar band of `output` with that of `reference`,
/// per channel, and clamps the reconstruction to `[0, 1]`.
pub fn wavelet_color_fix(output: &Image, reference: &Image, levels: usize) -> Result<Image, MetricsError> {
    check(output, reference)?;
    let (w, h) = (output.width, output.height);
    let mut data = vec![0.0; w * h * 3];
    for c in 0..3 {
        let mut po = haar_decompose(&plane(output, c), w, h, levels);
        let pr = haar_decompose(&plane(reference, c), w, h, levels);
        po.ll = pr.ll;
        for (i, v) in haar_reconstruct(&po).into_iter().enumerate() {
            data[3 * i + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Image::new(w, h, data))
}

/// Summed detail-band energy over the three channels.
pub fn detail_energy(img: &Image, levels: usize) -> f64 {
    (0..3)
        .map(|c| haar_decompose(&plane(img, c), img.width, img.height, levels).detail_energy())
        .sum()
}
