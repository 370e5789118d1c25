use super::Optim3dError;
use crate::image::Image;

pub const PYRAMID_LEVELS: usize = 3;

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
const MAG_EPS: f64 = 1e-8;

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f64>,
}

fn channel(img: &Image, c: usize) -> Plane {
    Plane {
        w: img.width,
        h: img.height,
        d: img.data.chunks_exact(3).map(|p| p[c]).collect(),
    }
}

fn clampi(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Blur with the 5-tap binomial (clamp-to-edge), then keep even pixels.
fn blur_down(p: &Plane) -> Plane {
    let (w, h) = (p.w, p.h);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = TAPS
                .iter()
                .enumerate()
                .map(|(k, t)| t * p.d[y * w + clampi(x as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![0.0; w2 * h2];
    for y2 in 0..h2 {
        for x2 in 0..w2 {
            let (x, y) = (2 * x2, 2 * y2);
            out[y2 * w2 + x2] = TAPS
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clampi(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    Plane { w: w2, h: h2, d: out }
}

/// Adjoint of `blur_down` for a `w × h` input.
fn blur_down_t(g: &Plane, w: usize, h: usize) -> Plane {
    let mut tmp = vec![0.0; w * h];
    for y2 in 0..g.h {
        for x2 in 0..g.w {
            let (x, y) = (2 * x2, 2 * y2);
            let gv = g.d[y2 * g.w + x2];
            for (k, t) in TAPS.iter().enumerate() {
                tmp[clampi(y as isize + k as isize - 2, h) * w + x] += t * gv;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gv = tmp[y * w + x];
            if gv == 0.0 {
                continue;
            }
            for (k, t) in TAPS.iter().enumerate() {
                out[y * w + clampi(x as isize + k as isize - 2, w)] += t * gv;
            }
        }
    }
    Plane { w, h, d: out }
}

/// Forward-difference gradient components; zero on the last column / row.
fn diffs(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.w, p.h);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                gx[i] = p.d[i + 1] - p.d[i];
            }
            if y + 1 < h {
                gy[i] = p.d[i + w] - p.d[i];
            }
        }
    }
    (gx, gy)
}

fn pyramid(p: Plane) -> Vec<Plane> {
    let mut levels = vec![p];
    for _ in 1..PYRAMID_LEVELS {
        let next = blur_down(levels.last().expect("non-empty"));
        levels.push(next);
    }
    levels
}

fn check(a: &Image, b: &Image) -> Result<(), Optim3dError> {
    if !a.same_shape(b) {
        return Err(Optim3dError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean absolute difference of gradient magnitudes, averaged over channels
/// and over a 3-level binomial pyramid.
pub fn perceptual_proxy(a: &Image, b: &Image) -> Result<f64, Optim3dError> {
    perceptual_proxy_grad(a, b).map(|(v, _)| v)
}

/// Proxy value and its gradient with respect to `a`.
pub fn perceptual_proxy_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>), Optim3dError> {
    check(a, b)?;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for c in 0..3 {
        let pa = pyramid(channel(a, c));
        let pb = pyramid(channel(b, c));
        let mut upstream: Option<Plane> = None;
        for l in (0..PYRAMID_LEVELS).rev() {
            let (la, lb) = (&pa[l], &pb[l]);
            let n = (la.w * la.h) as f64;
            let scale = 1.0 / (n * PYRAMID_LEVELS as f64 * 3.0);
            let (ax, ay) = diffs(la);
            let (bx, by) = diffs(lb);
            let mut g = match upstream.take() {
                Some(u) => blur_down_t(&u, la.w, la.h).d,
                None => vec![0.0; la.w * la.h],
            };
            for i in 0..la.w * la.h {
                let ma = (ax[i] * ax[i] + ay[i] * ay[i] + MAG_EPS).sqrt();
                let mb = (bx[i] * bx[i] + by[i] * by[i] + MAG_EPS).sqrt();
                let diff = ma - mb;
                total += diff.abs() * scale;
                if diff == 0.0 {
                    continue;
                }
                let s = diff.signum() * scale / ma;
                let (dx, dy) = (s * ax[i], s * ay[i]);
                let (x, y) = (i % la.w, i / la.w);
                if x + 1 < la.w {
                    g[i + 1] += dx;
                    g[i] -= dx;
                }
                if y + 1 < la.h {
                    g[i + la.w] += dy;
                    g[i] -= dy;
                }
            }
            upstream = Some(Plane { w: la.w, h: la.h, d: g });
        }
        let g0 = upstream.expect("level 0");
        for (i, v) in g0.d.iter().enumerate() {
            grad[3 * i + c] = *v;
        }
    }
    Ok((total, grad))
}

/// Mean absolute error and its (sub)gradient with respect to `a`.
pub fn l1_loss_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>), Optim3dError> {
    check(a, b)?;
    let n = a.data.len() as f64;
    let mut loss = 0.0;
    let grad = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            loss += (x - y).abs();
            (x - y).signum() * f64::from(u8::from(x != y)) / n
        })
        .collect();
    Ok((loss / n, grad))
}
