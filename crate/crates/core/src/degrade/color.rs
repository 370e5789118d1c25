use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};
use crate::rng::keyed_rng;

/// Overlay color of the translucent-mask stage.
pub const TRANSLUCENT_GRAY: f64 = 0.5;

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Half-open pixel rectangle with a hue offset (turns) and a saturation offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectShift {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub hue: f64,
    pub saturation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorShiftParams {
    pub rects: Vec<RectShift>,
}

fn random_rect(w: usize, h: usize, min_frac: f64, max_frac: f64, rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let rw = ((w as f64 * rng.gen_range(min_frac..=max_frac)).round() as usize).clamp(1, w);
    let rh = ((h as f64 * rng.gen_range(min_frac..=max_frac)).round() as usize).clamp(1, h);
    let x0 = rng.gen_range(0..=w - rw);
    let y0 = rng.gen_range(0..=h - rh);
    (x0, y0, x0 + rw, y0 + rh)
}

impl ColorShiftParams {
    /// One to three rectangles, hue offsets in `[−0.5, 0.5]`, saturation offsets in `[−0.3, 0.3]`.
    pub fn sample(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=3);
        let rects = (0..n)
            .map(|_| {
                let (x0, y0, x1, y1) = random_rect(width, height, 0.125, 0.5, rng);
                RectShift {
                    x0,
                    y0,
                    x1,
                    y1,
                    hue: rng.gen_range(-0.5..=0.5),
                    saturation: rng.gen_range(-0.3..=0.3),
                }
            })
            .collect();
        Self { rects }
    }
}

pub fn apply_color_shift(img: &Image, mask: &Mask, params: &ColorShiftParams) -> Image {
    let mut out = img.clone();
    for r in &params.rects {
        if r.hue == 0.0 && r.saturation == 0.0 {
            continue;
        }
        for y in r.y0..r.y1.min(img.height) {
            for x in r.x0..r.x1.min(img.width) {
                if !mask.get(x, y) {
                    continue;
                }
                let [h, s, v] = rgb_to_hsv(out.pixel(x, y));
                let rgb = hsv_to_rgb([(h + r.hue).rem_euclid(1.0), (s + r.saturation).clamp(0.0, 1.0), v]);
                out.set_pixel(x, y, rgb);
            }
        }
    }
    out
}

pub fn color_shift(img: &Image, mask: &Mask, seed: u64) -> Image {
    let mut rng = keyed_rng(seed, 0, "color_shift");
    apply_color_shift(img, mask, &ColorShiftParams::sample(img.width, img.height, &mut rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslucentParams {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub alpha: f64,
}

impl TranslucentParams {
    /// A sub-rectangle of the mask's bounding box covering 30–100 % of each side.
    pub fn sample(mask: &Mask, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        let (bx0, by0, bx1, by1) = mask.bbox().unwrap_or((0, 0, mask.width - 1, mask.height - 1));
        let (x0, y0, x1, y1) = random_rect(bx1 - bx0 + 1, by1 - by0 + 1, 0.3, 1.0, rng);
        Self {
            x0: bx0 + x0,
            y0: by0 + y0,
            x1: bx0 + x1,
            y1: by0 + y1,
            alpha,
        }
    }
}

/// `(1 − α)·img + α·gray` on the rectangle ∩ mask.
pub fn apply_translucent(img: &Image, mask: &Mask, p: &TranslucentParams) -> Image {
    let mut out = img.clone();
    for y in p.y0..p.y1.min(img.height) {
        for x in p.x0..p.x1.min(img.width) {
            if mask.get(x, y) {
                let px = out.pixel(x, y).map(|v| (1.0 - p.alpha) * v + p.alpha * TRANSLUCENT_GRAY);
                out.set_pixel(x, y, px);
            }
        }
    }
    out
}

pub fn translucent_mask(img: &Image, mask: &Mask, alpha: f64, seed: u64) -> Image {
    let mut rng = keyed_rng(seed, 0, "translucent_mask");
    apply_translucent(img, mask, &TranslucentParams::sample(mask, alpha, &mut rng))
}
