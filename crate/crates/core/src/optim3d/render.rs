use nalgebra::Vector3;
use serde::Serialize;
use rayon::prelude::*;

use super::VoxelScene;
use crate::image::Image;
use crate::mvgeom::CameraPose;

/// Background color composited behind the volume.
pub const BACKGROUND: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RenderSettings {
    /// Samples per ray across the box.
    pub steps: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { steps: 64 }
    }
}

/// Parametric entry and exit of a ray through the box, if it hits with `t1 > t0 ≥ 0`.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - o[k]) / d[k];
        let b = (hi[k] - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then_some((t0, t1))
}

struct Sample {
    nb: [(usize, f64); 8],
    sigma: f64,
    rgb: [f64; 3],
}

/// Samples of one ray plus the step length.
fn march(scene: &VoxelScene, o: &Vector3<f64>, d: &Vector3<f64>, steps: usize) -> (Vec<Sample>, f64) {
    let Some((t0, t1)) = ray_box(o, d, scene.bbox_min, scene.bbox_max) else {
        return (Vec::new(), 0.0);
    };
    let dt = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps);
    for m in 0..steps {
        let t = t0 + (m as f64 + 0.5) * dt;
        let p = o + d * t;
        if let Some(nb) = scene.trilinear([p.x, p.y, p.z]) {
            let mut sigma = 0.0;
            let mut rgb = [0.0; 3];
            for &(i, w) in &nb {
                sigma += w * scene.density[i];
                for k in 0..3 {
                    rgb[k] += w * scene.color[3 * i + k];
                }
            }
            out.push(Sample { nb, sigma, rgb });
        }
    }
    (out, dt)
}

/// Color and opacity of one ray.
fn composite(samples: &[Sample], dt: f64) -> ([f64; 3], f64) {
    let mut trans = 1.0;
    let mut c = [0.0; 3];
    for s in samples {
        let a = 1.0 - (-s.sigma * dt).exp();
        for k in 0..3 {
            c[k] += trans * a * s.rgb[k];
        }
        trans *= 1.0 - a;
    }
    for v in &mut c {
        *v += trans * BACKGROUND;
    }
    (c, 1.0 - trans)
}

fn pixel_ray(pose: &CameraPose, x: usize, y: usize, w: usize, h: usize) -> (Vector3<f64>, Vector3<f64>) {
    (pose.center, pose.pixel_ray(x, y, w, h))
}

/// Emission–absorption rendering over a white background.
pub fn render(scene: &VoxelScene, pose: &CameraPose, h: usize, w: usize) -> Image {
    render_with(scene, pose, h, w, RenderSettings::default()).0
}

/// Image and per-pixel opacity.
pub fn render_with(scene: &VoxelScene, pose: &CameraPose, h: usize, w: usize, settings: RenderSettings) -> (Image, Vec<f64>) {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut alpha = Vec::with_capacity(w);
            for x in 0..w {
                let (o, d) = pixel_ray(pose, x, y, w, h);
                let (s, dt) = march(scene, &o, &d, settings.steps);
                let (c, a) = composite(&s, dt);
                rgb.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
                alpha.push(a);
            }
            (rgb, alpha)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * 3);
    let mut alpha = Vec::with_capacity(w * h);
    for (r, a) in rows {
        data.extend(r);
        alpha.extend(a);
    }
    (Image::new(w, h, data), alpha)
}

/// Gradients of a scalar loss with respect to scene densities and colors.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl SceneGrad {
    pub fn zeros(scene: &VoxelScene) -> Self {
        Self {
            density: vec![0.0; scene.cells()],
            color: vec![0.0; 3 * scene.cells()],
        }
    }

    pub fn add(&mut self, other: &SceneGrad) {
        self.density.iter_mut().zip(&other.density).for_each(|(a, b)| *a += b);
        self.color.iter_mut().zip(&other.color).for_each(|(a, b)| *a += b);
    }
}

/// Rows per gradient chunk; chunks are summed in order so results do not
/// depend on the thread count.
const GRAD_CHUNK_ROWS: usize = 8;

/// Backpropagates `d_image` (same layout as the rendered image) to the scene.
pub fn render_backward(
    scene: &VoxelScene,
    pose: &CameraPose,
    h: usize,
    w: usize,
    settings: RenderSettings,
    d_image: &[f64],
) -> SceneGrad {
    assert_eq!(d_image.len(), w * h * 3, "image gradient size");
    let chunks: Vec<SceneGrad> = (0..h.div_ceil(GRAD_CHUNK_ROWS))
        .into_par_iter()
        .map(|ci| {
            let mut g = SceneGrad::zeros(scene);
            for y in ci * GRAD_CHUNK_ROWS..((ci + 1) * GRAD_CHUNK_ROWS).min(h) {
                for x in 0..w {
                    let gi = &d_image[(y * w + x) * 3..(y * w + x) * 3 + 3];
                    if gi.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let (o, d) = pixel_ray(pose, x, y, w, h);
                    let (s, dt) = march(scene, &o, &d, settings.steps);
                    if s.is_empty() {
                        continue;
                    }
                    let n = s.len();
                    // forward quantities
                    let mut trans = vec![1.0; n + 1];
                    let mut alpha = vec![0.0; n];
                    for m in 0..n {
                        alpha[m] = 1.0 - (-s[m].sigma * dt).exp();
                        trans[m + 1] = trans[m] * (1.0 - alpha[m]);
                    }
                    // clamp in the forward pass: zero gradient where a channel saturates
                    let (c, _) = composite(&s, dt);
                    let gmask: Vec<f64> = (0..3)
                        .map(|k| if (0.0..=1.0).contains(&c[k]) { gi[k] } else { 0.0 })
                        .collect();
                    // suffix Σ_{k>m} w_k c_k + T_N·bg, dotted with the upstream gradient
                    let mut tail = trans[n] * BACKGROUND * (gmask[0] + gmask[1] + gmask[2]);
                    for m in (0..n).rev() {
                        let wm = trans[m] * alpha[m];
                        let cdot: f64 = (0..3).map(|k| gmask[k] * s[m].rgb[k]).sum();
                        let d_sigma = dt * (trans[m + 1] * cdot - tail);
                        tail += wm * cdot;
                        for &(i, tw) in &s[m].nb {
                            g.density[i] += tw * d_sigma;
                            for k in 0..3 {
                                g.color[3 * i + k] += tw * wm * gmask[k];
                            }
                        }
                    }
                }
            }
            g
        })
        .collect();
    let mut total = SceneGrad::zeros(scene);
    for c in &chunks {
        total.add(c);
    }
    total
}
