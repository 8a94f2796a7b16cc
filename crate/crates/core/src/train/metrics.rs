//! Image-quality metrics: PSNR and mean SSIM.

use crate::image::Image;

pub use super::ssim::ssim;

/// Peak signal-to-noise ratio in dB for images in [0,1], capped at 100 dB
/// when the MSE drops below 1e−10.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.width, b.width);
    assert_eq!(a.height, b.height);
    let mut mse = 0.0;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            mse += d * d;
        }
    }
    mse /= (a.pixels.len() * 3) as f64;
    if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR restricted to pixels where `mask` is nonzero, same 100 dB cap.
pub fn psnr_masked(a: &Image, b: &Image, mask: &[f64]) -> f64 {
    assert_eq!(a.pixels.len(), mask.len());
    let mut mse = 0.0;
    let mut count = 0.0;
    for ((pa, pb), &m) in a.pixels.iter().zip(&b.pixels).zip(mask) {
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            let d = pa[c] - pb[c];
            mse += d * d;
        }
        count += 3.0;
    }
    if count == 0.0 {
        return 100.0;
    }
    mse /= count;
    if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
