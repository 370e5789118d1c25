use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::rng::keyed_rng;

/// Cells per side of the distortion control grid.
pub const GRID_CELLS: usize = 8;

/// Random displacements, in pixels, for the `(GRID_CELLS + 1)²` control
/// points (row-major). Border points stay fixed; interior points move by up
/// to `strength` cell sizes along each axis.
pub fn random_grid_offsets(width: usize, height: usize, strength: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = GRID_CELLS + 1;
    let cw = width as f64 / GRID_CELLS as f64;
    let ch = height as f64 / GRID_CELLS as f64;
    let mut out = vec![[0.0; 2]; n * n];
    for i in 1..GRID_CELLS {
        for j in 1..GRID_CELLS {
            let dx = rng.gen_range(-1.0..=1.0) * strength * cw;
            let dy = rng.gen_range(-1.0..=1.0) * strength * ch;
            out[i * n + j] = [dx, dy];
        }
    }
    out
}

/// Backward warp: each output pixel samples the input at its own position
/// plus the bilinearly interpolated control-point displacement.
pub fn warp_with_offsets(img: &Image, offsets: &[[f64; 2]]) -> Image {
    let n = GRID_CELLS + 1;
    assert_eq!(offsets.len(), n * n, "control grid size");
    let (w, h) = (img.width, img.height);
    let cw = w as f64 / GRID_CELLS as f64;
    let chh = h as f64 / GRID_CELLS as f64;
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let gx = px / cw;
            let gy = py / chh;
            let j0 = (gx.floor() as usize).min(GRID_CELLS - 1);
            let i0 = (gy.floor() as usize).min(GRID_CELLS - 1);
            let (tx, ty) = (gx - j0 as f64, gy - i0 as f64);
            let o = |i: usize, j: usize, k: usize| offsets[i * n + j][k];
            let lerp = |k| {
                let top = o(i0, j0, k) * (1.0 - tx) + o(i0, j0 + 1, k) * tx;
                let bot = o(i0 + 1, j0, k) * (1.0 - tx) + o(i0 + 1, j0 + 1, k) * tx;
                top * (1.0 - ty) + bot * ty
            };
            let (dx, dy) = (lerp(0), lerp(1));
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            for c in 0..3 {
                out.set(x, y, c, img.sample_bilinear(px + dx, py + dy, c));
            }
        }
    }
    out
}

pub fn grid_distortion(img: &Image, strength: f64, seed: u64) -> Image {
    let mut rng = keyed_rng(seed, 0, "grid_distortion");
    let offsets = random_grid_offsets(img.width, img.height, strength, &mut rng);
    warp_with_offsets(img, &offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_strength_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = Image::new(16, 16, (0..16 * 16 * 3).map(|_| rng.gen::<f64>()).collect());
        assert_eq!(grid_distortion(&img, 0.0, 5), img);
    }

    #[test]
    fn single_control_point_on_ramp() {
        // 24 px, cells of 3 px; point (4, 4) sits at (12, 12)
        let w = 24;
        let mut img = Image::new(w, w, vec![0.0; w * w * 3]);
        for y in 0..w {
            for x in 0..w {
                img.set(x, y, 0, (x as f64 + 0.5) / w as f64);
                img.set(x, y, 1, (y as f64 + 0.5) / w as f64);
            }
        }
        let mut off = vec![[0.0; 2]; 81];
        off[4 * 9 + 4] = [1.2, -0.8];
        let out = warp_with_offsets(&img, &off);
        // pixel 13 has center 13.5, the middle of cell (4, 4): weight 1/4
        let (ex, ey) = ((13.5 + 0.3) / w as f64, (13.5 - 0.2) / w as f64);
        assert!((out.get(13, 13, 0) - ex).abs() < 1e-12);
        assert!((out.get(13, 13, 1) - ey).abs() < 1e-12);
        // far cells untouched
        assert_eq!(out.get(2, 2, 0), img.get(2, 2, 0));
    }

    #[test]
    fn output_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::new(20, 12, (0..20 * 12 * 3).map(|_| rng.gen::<f64>()).collect());
        let out = grid_distortion(&img, 0.5, 8);
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(out, img);
    }
}
