//! Brute-force per-pixel reference renderer (oracle for the tile path).

use super::{
    composite_pixel, fnv_fold, fnv_start, fold_color_clamps, prepare_view, RenderArtifacts,
    RenderConfig,
};
use crate::gsmath::{Camera, GaussianCloud};
use crate::image::Image;
use crate::{Error, Result};

/// Default cap on the number of Gaussians the reference path accepts.
pub const REFERENCE_CAP_DEFAULT: usize = 4096;

/// Render one view by evaluating every Gaussian at every pixel, applying the
/// identical thresholds as [`super::rasterize_forward`]. No tiling, no
/// binning; the only shortcut is the shared early-termination rule.
pub fn rasterize_reference(
    cloud: &GaussianCloud,
    camera: &Camera,
    cfg: &RenderConfig,
    cap: usize,
) -> Result<RenderArtifacts> {
    cloud.validate()?;
    camera.validate()?;
    cfg.validate()?;
    if cloud.len() > cap {
        return Err(Error::ReferenceCapExceeded {
            n: cloud.len(),
            cap,
        });
    }

    let (prepared, mut stats) = prepare_view(cloud, camera);
    let order: Vec<usize> = (0..prepared.len()).collect();
    let (w, h) = (camera.width, camera.height);
    let mut image = Image::new(w, h);
    let mut final_t = vec![1.0f64; w * h];
    let mut hash = fnv_start();

    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0.0f64; 3];
            let pixel_index = (y * w + x) as u64;
            let t_final = composite_pixel(&prepared, &order, x as f64, y as f64, cfg, |c| {
                let g = &prepared[c.slot];
                let wgt = c.alpha * c.transmittance_before;
                for ch in 0..3 {
                    rgb[ch] += g.color.rgb[ch] * wgt;
                }
                if cfg.count_coverage && g.valid {
                    stats[g.idx].coverage += 1;
                }
                hash = fnv_fold(
                    hash,
                    pixel_index << 22 | (g.idx as u64) << 1 | c.clamped as u64,
                );
            });
            for ch in 0..3 {
                rgb[ch] += t_final * cfg.background[ch];
            }
            image.pixels[y * w + x] = rgb;
            final_t[y * w + x] = t_final;
        }
    }
    hash = fold_color_clamps(hash, &prepared);

    Ok(RenderArtifacts {
        image,
        final_transmittance: final_t,
        per_gaussian: stats,
        structure_hash: hash,
    })
}
