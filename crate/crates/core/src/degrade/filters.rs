use rand_distr::{Distribution, StandardNormal};

use super::DegradeError;
use crate::image::Image;
use crate::rng::rng_from_key;

pub(super) fn check_kernel_size(k: usize) -> Result<(), DegradeError> {
    if k % 2 == 0 || !(7..=21).contains(&k) {
        return Err(DegradeError::InvalidKernel(format!(
            "kernel size {k} is not one of 7, 9, ..., 21"
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps, centered.
pub fn gaussian_kernel_1d(k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn convolve_separable(img: &Image, taps: &[f64]) -> Image {
    let (w, h) = (img.width, img.height);
    let r = (taps.len() / 2) as isize;
    let mut tmp = Image::new(w, h, vec![0.0; w * h * 3]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    acc += t * img.get_clamped(x as isize + i as isize - r, y as isize, ch);
                }
                tmp.set(x, y, ch, acc);
            }
        }
    }
    let mut out = Image::new(w, h, vec![0.0; w * h * 3]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    acc += t * tmp.get_clamped(x as isize, y as isize + i as isize - r, ch);
                }
                out.set(x, y, ch, acc);
            }
        }
    }
    out
}

/// Isotropic Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, kernel_size: usize, sigma: f64) -> Result<Image, DegradeError> {
    check_kernel_size(kernel_size)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DegradeError::InvalidKernel(format!("sigma {sigma} must be positive")));
    }
    Ok(convolve_separable(img, &gaussian_kernel_1d(kernel_size, sigma)))
}

/// Circularly symmetric ideal low-pass kernel with angular cutoff `omega`
/// (radians per pixel), `k × k`, normalized to unit sum.
pub fn sinc_kernel(k: usize, omega: f64) -> Vec<f64> {
    let r = (k / 2) as f64;
    let mut taps = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let (dy, dx) = (i as f64 - r, j as f64 - r);
            let d = (dx * dx + dy * dy).sqrt();
            taps.push(if d < 1e-12 {
                omega * omega / (4.0 * std::f64::consts::PI)
            } else {
                omega * libm::j1(omega * d) / (2.0 * std::f64::consts::PI * d)
            });
        }
    }
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

pub fn sinc_filter(img: &Image, kernel_size: usize, omega: f64) -> Result<Image, DegradeError> {
    check_kernel_size(kernel_size)?;
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(DegradeError::InvalidKernel(format!("cutoff {omega} must be positive")));
    }
    let taps = sinc_kernel(kernel_size, omega);
    let k = kernel_size as isize;
    let r = k / 2;
    let (w, h) = (img.width, img.height);
    let mut out = Image::new(w, h, vec![0.0; w * h * 3]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        acc += taps[(i * k + j) as usize]
                            * img.get_clamped(x as isize + j - r, y as isize + i - r, ch);
                    }
                }
                out.set(x, y, ch, acc);
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling to `new_w × new_h`, pixel centers aligned.
pub fn resize_bilinear(img: &Image, new_w: usize, new_h: usize) -> Image {
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let mut out = Image::new(new_w, new_h, vec![0.0; new_w * new_h * 3]);
    for y in 0..new_h {
        for x in 0..new_w {
            let px = (x as f64 + 0.5) * sx;
            let py = (y as f64 + 0.5) * sy;
            for ch in 0..3 {
                out.set(x, y, ch, img.sample_bilinear(px, py, ch));
            }
        }
    }
    out
}

/// Resizes by `scale` and back to the original resolution.
pub fn resize_round_trip(img: &Image, scale: f64) -> Image {
    let nw = ((img.width as f64 * scale).round() as usize).max(1);
    let nh = ((img.height as f64 * scale).round() as usize).max(1);
    let small = resize_bilinear(img, nw, nh);
    resize_bilinear(&small, img.width, img.height)
}

/// Adds i.i.d. `N(0, sigma²)` per channel value from the stream `key`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, key: u64) -> Image {
    let mut rng = rng_from_key(key);
    let mut out = img.clone();
    for v in &mut out.data {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_survives_blur_and_sinc() {
        let img = Image::filled(12, 9, [0.3, 0.6, 0.9]);
        let b = gaussian_blur(&img, 9, 1.7).unwrap();
        let s = sinc_filter(&img, 7, 1.3).unwrap();
        for (a, (x, y)) in img.data.iter().zip(b.data.iter().zip(&s.data)) {
            assert!((a - x).abs() < 1e-9 && (a - y).abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_response_is_closed_form_gaussian() {
        let mut img = Image::new(15, 15, vec![0.0; 15 * 15 * 3]);
        img.set(7, 7, 0, 1.0);
        let out = gaussian_blur(&img, 7, 0.2).unwrap();
        let g = |d: f64| (-d * d / (2.0 * 0.04)).exp();
        let z: f64 = (-3..=3).map(|d| g(d as f64)).sum();
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                let e = g(dx as f64) * g(dy as f64) / (z * z);
                let v = out.get((7 + dx) as usize, (7 + dy) as usize, 0);
                assert!((v - e).abs() < 1e-15);
            }
        }
        let k = gaussian_kernel_1d(21, 3.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((sinc_kernel(13, 2.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_reduces_noise_variance() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::new(24, 24, (0..24 * 24 * 3).map(|_| rng.gen::<f64>()).collect());
            let var = |im: &Image| {
                let m = im.data.iter().sum::<f64>() / im.data.len() as f64;
                im.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / im.data.len() as f64
            };
            assert!(var(&gaussian_blur(&img, 7, 1.0).unwrap()) < var(&img));
        }
    }

    #[test]
    fn kernel_validation() {
        let img = Image::white(4, 4);
        assert!(gaussian_blur(&img, 8, 1.0).is_err());
        assert!(gaussian_blur(&img, 23, 1.0).is_err());
        assert!(gaussian_blur(&img, 5, 1.0).is_err());
    }

    #[test]
    fn resize_identity_at_scale_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::new(10, 7, (0..210).map(|_| rng.gen::<f64>()).collect());
        assert_eq!(resize_round_trip(&img, 1.0), img);
    }
}
