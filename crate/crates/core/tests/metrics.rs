use mvenhance::image::Image;
use mvenhance::metrics::{haar_decompose, haar_reconstruct, psnr, ssim, wavelet_color_fix, MetricsError, PSNR_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
}

#[test]
fn psnr_closed_form_and_cap() {
    let a = Image::filled(8, 8, [0.5; 3]);
    let b = Image::filled(8, 8, [0.6; 3]);
    // mse = 0.01 -> 20 dB
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
}

#[test]
fn ssim_bounds_and_symmetry() {
    let a = noisy(1, 24, 20);
    let b = noisy(2, 24, 20);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let s = ssim(&a, &b).unwrap();
    assert!(s < 0.5 && s > -1.0);
    assert_eq!(s, ssim(&b, &a).unwrap());
    assert!(matches!(ssim(&a, &noisy(3, 8, 8)), Err(MetricsError::ShapeMismatch(_))));
}

#[test]
fn haar_is_lossless_on_odd_sizes() {
    let img = noisy(4, 13, 7);
    let plane: Vec<f64> = (0..13 * 7).map(|i| img.data[3 * i]).collect();
    let rec = haar_reconstruct(&haar_decompose(&plane, 13, 7, 3));
    for (a, b) in rec.iter().zip(&plane) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn color_fix_takes_reference_low_frequencies() {
    let detail = noisy(5, 32, 32);
    let out = Image::new(32, 32, detail.data.iter().map(|v| 0.2 + 0.5 * v).collect());
    let reference = Image::filled(32, 32, [0.6, 0.3, 0.5]);
    let fixed = wavelet_color_fix(&out, &reference, 5).unwrap();
    let m = fixed.channel_means();
    for (a, b) in m.iter().zip([0.6, 0.3, 0.5]) {
        assert!((a - b).abs() < 1e-9, "{m:?}");
    }
}
