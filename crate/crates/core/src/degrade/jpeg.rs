//! Baseline JPEG quantization round trip: 8-bit YCbCr, 4:2:0 chroma,
//! 8×8 DCT, standard luminance/chrominance tables scaled by quality.
//! Entropy coding is lossless and therefore skipped.

use crate::image::Image;

const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// Luminance and chrominance quantization tables for `quality ∈ [1, 100]`.
pub fn quant_tables(quality: u8) -> ([f64; 64], [f64; 64]) {
    let q = i32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mk = |base: &[u16; 64]| {
        let mut t = [0.0; 64];
        for (o, &b) in t.iter_mut().zip(base) {
            *o = ((i32::from(b) * scale + 50) / 100).clamp(1, 255) as f64;
        }
        t
    };
    (mk(&LUMA), mk(&CHROMA))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    c
}

/// Quantizes one plane in place (`w`, `h` multiples of 8).
fn quantize_plane(plane: &mut [f64], w: usize, h: usize, table: &[f64; 64], basis: &[[f64; 8]; 8]) {
    let mut blk = [[0.0; 8]; 8];
    let mut tmp = [[0.0; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    blk[y][x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            // forward: C · B · Cᵀ
            for u in 0..8 {
                for x in 0..8 {
                    tmp[u][x] = (0..8).map(|y| basis[u][y] * blk[y][x]).sum();
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let coef: f64 = (0..8).map(|x| tmp[u][x] * basis[v][x]).sum();
                    let q = table[u * 8 + v];
                    blk[u][v] = (coef / q).round() * q;
                }
            }
            // inverse: Cᵀ · D · C
            for y in 0..8 {
                for v in 0..8 {
                    tmp[y][v] = (0..8).map(|u| basis[u][y] * blk[u][v]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let s: f64 = (0..8).map(|v| tmp[y][v] * basis[v][x]).sum();
                    plane[(by + y) * w + bx + x] = s + 128.0;
                }
            }
        }
    }
}

/// Encodes and decodes `img` at `quality`, returning values on the 8-bit grid.
pub fn jpeg_round_trip(img: &Image, quality: u8) -> Image {
    let (w, h) = (img.width, img.height);
    let pw = w.div_ceil(16) * 16;
    let ph = h.div_ceil(16) * 16;
    let (cw, chh) = (pw / 2, ph / 2);
    let mut yp = vec![0.0; pw * ph];
    let mut cb_full = vec![0.0; pw * ph];
    let mut cr_full = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let (sx, sy) = (x.min(w - 1), y.min(h - 1));
            let p = img.pixel(sx, sy).map(|v| (v.clamp(0.0, 1.0) * 255.0).round());
            let i = y * pw + x;
            yp[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            cb_full[i] = -0.168_735_9 * p[0] - 0.331_264_1 * p[1] + 0.5 * p[2] + 128.0;
            cr_full[i] = 0.5 * p[0] - 0.418_687_6 * p[1] - 0.081_312_4 * p[2] + 128.0;
        }
    }
    let sub = |full: &[f64]| {
        let mut out = vec![0.0; cw * chh];
        for y in 0..chh {
            for x in 0..cw {
                let i = 2 * y * pw + 2 * x;
                out[y * cw + x] = 0.25 * (full[i] + full[i + 1] + full[i + pw] + full[i + pw + 1]);
            }
        }
        out
    };
    let mut cb = sub(&cb_full);
    let mut cr = sub(&cr_full);
    let (ql, qc) = quant_tables(quality);
    let basis = dct_basis();
    quantize_plane(&mut yp, pw, ph, &ql, &basis);
    quantize_plane(&mut cb, cw, chh, &qc, &basis);
    quantize_plane(&mut cr, cw, chh, &qc, &basis);
    let mut out = Image::new(w, h, vec![0.0; w * h * 3]);
    for y in 0..h {
        for x in 0..w {
            let yy = yp[y * pw + x];
            let ci = (y / 2) * cw + x / 2;
            let (b, r) = (cb[ci] - 128.0, cr[ci] - 128.0);
            let rgb = [yy + 1.402 * r, yy - 0.344_136 * b - 0.714_136 * r, yy + 1.772 * b];
            out.set_pixel(x, y, rgb.map(|v| v.round().clamp(0.0, 255.0) / 255.0));
        }
    }
    out
}
