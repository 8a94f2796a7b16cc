//! SSIM with an analytic gradient.
//!
//! Local statistics use an 11×11 Gaussian window (σ = 1.5) with partial
//! windows renormalized at the borders, so the index is defined for any
//! image size and matches the usual valid-window value in the interior.
//! Writing s = l·cs with l = A1/B1 and cs = A2/B2 on the independent
//! intermediates (μx, μy, E[x²], E[y²], E[xy]):
//!
//!   ∂s/∂E[xy] = 2l/B2,  ∂s/∂E[x²] = −l·cs/B2,
//!   ∂s/∂μx = 2cs(μy − μx·l)/B1 + 2l(μx·cs − μy)/B2
//!
//! and each pulls back through the adjoint of the normalized blur.

use crate::image::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Unnormalized symmetric 1D blur along x then y (zero beyond borders).
fn blur_unnorm(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xi = x as isize + i as isize - half as isize;
                if xi >= 0 && (xi as usize) < w {
                    acc += kv * src[y * w + xi as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yi = y as isize + i as isize - half as isize;
                if yi >= 0 && (yi as usize) < h {
                    acc += kv * tmp[yi as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-position normalization: product of the in-bounds 1D kernel masses.
fn norm_map(w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW / 2;
    let axis = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|x| {
                k.iter()
                    .enumerate()
                    .filter(|(i, _)| {
                        let xi = x as isize + *i as isize - half as isize;
                        xi >= 0 && (xi as usize) < len
                    })
                    .map(|(_, &kv)| kv)
                    .sum::<f64>()
            })
            .collect()
    };
    let nx = axis(w);
    let ny = axis(h);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = nx[x] * ny[y];
        }
    }
    out
}

fn blur(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW], norm: &[f64]) -> Vec<f64> {
    let mut out = blur_unnorm(src, w, h, k);
    for (o, n) in out.iter_mut().zip(norm) {
        *o /= n;
    }
    out
}

/// Adjoint of [`blur`]: divide first, then unnormalized blur (the kernel is
/// symmetric).
fn blur_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW], norm: &[f64]) -> Vec<f64> {
    let pre: Vec<f64> = src.iter().zip(norm).map(|(s, n)| s / n).collect();
    blur_unnorm(&pre, w, h, k)
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.pixels.iter().map(|p| p[c]).collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim(pred: &Image, target: &Image) -> f64 {
    ssim_with_grad(pred, target, false).0
}

/// Mean SSIM and (optionally) its gradient w.r.t. `pred`.
pub fn ssim_with_grad(pred: &Image, target: &Image, with_grad: bool) -> (f64, Image) {
    assert_eq!(pred.width, target.width);
    assert_eq!(pred.height, target.height);
    let (w, h) = (pred.width, pred.height);
    let k = kernel();
    let norm = norm_map(w, h, &k);
    let npix = (w * h) as f64;
    let mut total = 0.0;
    let mut grad = Image::new(w, h);
    for c in 0..3 {
        let x = channel(pred, c);
        let y = channel(target, c);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, w, h, &k, &norm);
        let mu_y = blur(&y, w, h, &k, &norm);
        let e_x2 = blur(&x2, w, h, &k, &norm);
        let e_y2 = blur(&y2, w, h, &k, &norm);
        let e_xy = blur(&xy, w, h, &k, &norm);

        let mut d_mu_x = vec![0.0; w * h];
        let mut d_e_x2 = vec![0.0; w * h];
        let mut d_e_xy = vec![0.0; w * h];
        for p in 0..w * h {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let var_x = e_x2[p] - mx * mx;
            let var_y = e_y2[p] - my * my;
            let cov = e_xy[p] - mx * my;
            let b1 = mx * mx + my * my + C1;
            let b2 = var_x + var_y + C2;
            let l = (2.0 * mx * my + C1) / b1;
            let cs = (2.0 * cov + C2) / b2;
            total += l * cs;
            if with_grad {
                d_mu_x[p] = 2.0 * cs * (my - mx * l) / b1 + 2.0 * l * (mx * cs - my) / b2;
                d_e_x2[p] = -l * cs / b2;
                d_e_xy[p] = 2.0 * l / b2;
            }
        }
        if with_grad {
            let g_mu = blur_adjoint(&d_mu_x, w, h, &k, &norm);
            let g_x2 = blur_adjoint(&d_e_x2, w, h, &k, &norm);
            let g_xy = blur_adjoint(&d_e_xy, w, h, &k, &norm);
            let scale = 1.0 / (3.0 * npix);
            for p in 0..w * h {
                grad.pixels[p][c] = scale * (g_mu[p] + 2.0 * x[p] * g_x2[p] + y[p] * g_xy[p]);
            }
        }
    }
    (total / (3.0 * npix), grad)
}
