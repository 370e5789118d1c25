use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::Optim3dError;
use crate::rng::keyed_rng;

/// Density + RGB voxel grid over an axis-aligned box. Cells are
/// cell-centered; storage is x-fastest, then y, then z.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoxelScene {
    pub g: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl VoxelScene {
    pub fn empty(g: usize, bbox_min: [f64; 3], bbox_max: [f64; 3]) -> Self {
        Self {
            g,
            bbox_min,
            bbox_max,
            density: vec![0.0; g * g * g],
            color: vec![0.5; g * g * g * 3],
        }
    }

    pub fn cells(&self) -> usize {
        self.g * self.g * self.g
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.g + y) * self.g + x
    }

    pub fn cell_size(&self) -> [f64; 3] {
        let g = self.g as f64;
        [
            (self.bbox_max[0] - self.bbox_min[0]) / g,
            (self.bbox_max[1] - self.bbox_min[1]) / g,
            (self.bbox_max[2] - self.bbox_min[2]) / g,
        ]
    }

    /// World position of a cell center.
    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let c = self.cell_size();
        [
            self.bbox_min[0] + (x as f64 + 0.5) * c[0],
            self.bbox_min[1] + (y as f64 + 0.5) * c[1],
            self.bbox_min[2] + (z as f64 + 0.5) * c[2],
        ]
    }

    pub fn validate(&self) -> Result<(), Optim3dError> {
        let bad = |m: String| Err(Optim3dError::InvalidScene(m));
        if self.g == 0 {
            return bad("grid resolution must be at least 1".into());
        }
        if self.density.len() != self.cells() || self.color.len() != 3 * self.cells() {
            return bad("buffer sizes do not match the grid resolution".into());
        }
        for k in 0..3 {
            if !(self.bbox_max[k] > self.bbox_min[k]) {
                return bad(format!("bounding box axis {k} is empty"));
            }
        }
        if !self.density.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return bad("densities must be finite and non-negative".into());
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("colors must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Projects parameters back onto their feasible sets.
    pub fn clamp(&mut self) {
        self.density.iter_mut().for_each(|d| *d = d.max(0.0));
        self.color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
    }

    /// Eight trilinear neighbours `(index, weight)` of a world point, or
    /// `None` outside the box.
    #[inline]
    pub fn trilinear(&self, p: [f64; 3]) -> Option<[(usize, f64); 8]> {
        let c = self.cell_size();
        let gm = (self.g - 1) as f64;
        let mut i0 = [0usize; 3];
        let mut t = [0.0; 3];
        for k in 0..3 {
            if p[k] < self.bbox_min[k] || p[k] > self.bbox_max[k] {
                return None;
            }
            let u = ((p[k] - self.bbox_min[k]) / c[k] - 0.5).clamp(0.0, gm);
            let f = u.floor().min((self.g.max(2) - 2) as f64);
            i0[k] = f as usize;
            t[k] = u - f;
        }
        let g = self.g;
        let step = |k: usize| usize::from(g > 1 && i0[k] + 1 < g);
        let mut out = [(0usize, 0.0); 8];
        for (n, o) in out.iter_mut().enumerate() {
            let (bx, by, bz) = (n & 1, (n >> 1) & 1, (n >> 2) & 1);
            let x = i0[0] + bx * step(0);
            let y = i0[1] + by * step(1);
            let z = i0[2] + bz * step(2);
            let w = (if bx == 1 { t[0] } else { 1.0 - t[0] })
                * (if by == 1 { t[1] } else { 1.0 - t[1] })
                * (if bz == 1 { t[2] } else { 1.0 - t[2] });
            *o = (self.index(x, y, z), w);
        }
        Some(out)
    }

    /// A coarse stand-in for a reconstruction from degraded views: box-blurred
    /// geometry and color, a global color cast, per-cell color noise, and
    /// density floaters.
    pub fn coarse_init(&self, seed: u64) -> VoxelScene {
        let g = self.g as isize;
        let mut out = self.clone();
        let r = 1isize;
        for z in 0..g {
            for y in 0..g {
                for x in 0..g {
                    let mut acc = [0.0; 4];
                    let mut n = 0.0;
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                                if xx < 0 || yy < 0 || zz < 0 || xx >= g || yy >= g || zz >= g {
                                    continue;
                                }
                                let i = self.index(xx as usize, yy as usize, zz as usize);
                                acc[0] += self.density[i];
                                for k in 0..3 {
                                    acc[1 + k] += self.color[3 * i + k];
                                }
                                n += 1.0;
                            }
                        }
                    }
                    let i = self.index(x as usize, y as usize, z as usize);
                    out.density[i] = 0.6 * acc[0] / n;
                    for k in 0..3 {
                        out.color[3 * i + k] = acc[1 + k] / n;
                    }
                }
            }
        }
        let mut rng = keyed_rng(seed, 0, "coarse_init");
        let cast = [0.12, -0.06, -0.1];
        for i in 0..out.cells() {
            for k in 0..3 {
                let e: f64 = StandardNormal.sample(&mut rng);
                out.color[3 * i + k] += cast[k] + 0.12 * e;
            }
            if rng.gen::<f64>() < 0.02 {
                out.density[i] += rng.gen_range(2.0..8.0);
            }
        }
        out.clamp();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trilinear_weights_sum_to_one_and_hit_centers() {
        let s = VoxelScene::empty(4, [-1.0; 3], [1.0; 3]);
        let c = s.cell_center(2, 1, 3);
        let nb = s.trilinear(c).unwrap();
        let total: f64 = nb.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let best = nb.iter().cloned().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(best.0, s.index(2, 1, 3));
        assert!((best.1 - 1.0).abs() < 1e-12);
        assert!(s.trilinear([1.5, 0.0, 0.0]).is_none());
    }
}
