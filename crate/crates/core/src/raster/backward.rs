//! Analytic backward pass of the tile rasterizer.
//!
//! Per pixel the reverse sweep keeps the suffix sum
//! S = Σ_{j>i} c_j a_j T_j + T_N·bg, giving
//!
//!   ∂L/∂c_i = a_i T_i · ∂L/∂C
//!   ∂L/∂a_i = T_i (c_i · ∂L/∂C) − (S · ∂L/∂C)/(1 − a_i)
//!
//! and a_i = α_i·exp(p) chains into opacity, the pixel offset and Σ₂d:
//!
//!   ∂p/∂d = −Σ₂d⁻¹ d,   ∂p/∂Σ₂d = ½ (Σ₂d⁻¹d)(Σ₂d⁻¹d)ᵀ.
//!
//! Screen-space gradients then pull back through the projection per Gaussian.

use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::forward::{bin_tiles, tile_bounds};
use super::{composite_pixel, prepare_view, Contribution, RenderArtifacts, RenderConfig};
use crate::gsmath::{self, Camera, GaussianCloud};
use crate::image::Image;
use crate::{Error, Result};

/// Gradients for every parameter class of a [`GaussianCloud`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub positions: Vec<Vector3<f64>>,
    pub raw_scales: Vec<Vector3<f64>>,
    pub raw_rotations: Vec<Vector4<f64>>,
    pub raw_opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
}

impl ParamGrads {
    /// Flatten in the same layout as [`GaussianCloud::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.positions.len();
        let b = self.colors.len() / n.max(1);
        let mut out = Vec::with_capacity(n * (11 + 3 * b));
        for i in 0..n {
            out.extend_from_slice(self.positions[i].as_slice());
            out.extend_from_slice(self.raw_scales[i].as_slice());
            out.extend_from_slice(self.raw_rotations[i].as_slice());
            out.push(self.raw_opacities[i]);
            for c in &self.colors[i * b..(i + 1) * b] {
                out.extend_from_slice(c.as_slice());
            }
        }
        out
    }

    pub fn zeros(n: usize, basis: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            raw_scales: vec![Vector3::zeros(); n],
            raw_rotations: vec![Vector4::zeros(); n],
            raw_opacities: vec![0.0; n],
            colors: vec![Vector3::zeros(); n * basis],
        }
    }
}

/// Screen-space accumulators for one prepared slot.
#[derive(Clone)]
struct SlotGrads {
    d_center: Vector2<f64>,
    d_cov: Matrix2<f64>,
    d_alpha_act: f64,
    d_rgb: Vector3<f64>,
}

impl SlotGrads {
    fn zero() -> Self {
        Self {
            d_center: Vector2::zeros(),
            d_cov: Matrix2::zeros(),
            d_alpha_act: 0.0,
            d_rgb: Vector3::zeros(),
        }
    }

    fn add(&mut self, o: &SlotGrads) {
        self.d_center += o.d_center;
        self.d_cov += o.d_cov;
        self.d_alpha_act += o.d_alpha_act;
        self.d_rgb += o.d_rgb;
    }
}

/// Backward pass. `artifacts` must come from [`super::rasterize_forward`]
/// (or the reference renderer) on the same inputs; its `ndc_grad_norm`
/// fields are filled here.
pub fn rasterize_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    cfg: &RenderConfig,
    artifacts: &mut RenderArtifacts,
    dl_dimage: &Image,
) -> Result<ParamGrads> {
    cloud.validate()?;
    camera.validate()?;
    if artifacts.per_gaussian.len() != cloud.len()
        || artifacts.image.width != camera.width
        || artifacts.image.height != camera.height
        || dl_dimage.width != camera.width
        || dl_dimage.height != camera.height
    {
        return Err(Error::ShapeMismatch(
            "artifacts/gradient shapes do not match scene".into(),
        ));
    }

    let (prepared, _) = prepare_view(cloud, camera);
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(cfg.tile_size);
    let tiles_y = h.div_ceil(cfg.tile_size);
    let lists = bin_tiles(&prepared, tiles_x, tiles_y, cfg.tile_size);
    let bg = Vector3::new(cfg.background[0], cfg.background[1], cfg.background[2]);

    let tile_grads: Vec<Vec<(usize, SlotGrads)>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = tile_bounds(tile, tiles_x, cfg.tile_size, w, h);
            let order = &lists[tile];
            let mut local = vec![SlotGrads::zero(); prepared.len()];
            let mut touched = vec![false; prepared.len()];
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let dl = dl_dimage.pixels[y * w + x];
                    let dl = Vector3::new(dl[0], dl[1], dl[2]);
                    if dl == Vector3::zeros() {
                        continue;
                    }
                    contribs.clear();
                    let t_final = composite_pixel(
                        &prepared,
                        order,
                        x as f64,
                        y as f64,
                        cfg,
                        |c| contribs.push(*c),
                    );
                    let mut suffix = bg * t_final;
                    for c in contribs.iter().rev() {
                        let g = &prepared[c.slot];
                        let acc = &mut local[c.slot];
                        touched[c.slot] = true;
                        let wgt = c.alpha * c.transmittance_before;
                        acc.d_rgb += dl * wgt;
                        let da = c.transmittance_before * g.color.rgb.dot(&dl)
                            - suffix.dot(&dl) / (1.0 - c.alpha);
                        suffix += g.color.rgb * wgt;
                        if c.clamped {
                            continue;
                        }
                        acc.d_alpha_act += c.weight * da;
                        // dp = ∂L/∂power with a = α e^p.
                        let dp = c.alpha * da;
                        let d = Vector2::new(
                            x as f64 - g.proj.center_px.x,
                            y as f64 - g.proj.center_px.y,
                        );
                        let pd = g.inv_cov * d;
                        acc.d_center += pd * dp;
                        acc.d_cov += (pd * pd.transpose()) * (0.5 * dp);
                    }
                }
            }
            (0..prepared.len())
                .filter(|&s| touched[s])
                .map(|s| (s, local[s].clone()))
                .collect()
        })
        .collect();

    let mut slots = vec![SlotGrads::zero(); prepared.len()];
    for tg in &tile_grads {
        for (s, g) in tg {
            slots[*s].add(g);
        }
    }

    let basis = cloud.basis();
    let mut grads = ParamGrads::zeros(cloud.len(), basis);
    let half_w = 0.5 * w as f64;
    let half_h = 0.5 * h as f64;
    for (slot, g) in prepared.iter().enumerate() {
        let acc = &slots[slot];
        let i = g.idx;
        // ∂px/∂ndc = W/2 (resp. H/2): the NDC-gradient magnitude of the view.
        let ndc = Vector2::new(acc.d_center.x * half_w, acc.d_center.y * half_h);
        artifacts.per_gaussian[i].ndc_grad_norm = ndc.norm();

        let pg = gsmath::project_backward(
            &cloud.positions[i],
            &cloud.raw_scales[i],
            &cloud.raw_rotations[i],
            camera,
            &acc.d_center,
            &acc.d_cov,
        );
        grads.positions[i] += pg.d_position;
        grads.raw_scales[i] += pg.d_raw_scale;
        grads.raw_rotations[i] += pg.d_raw_rotation;

        let alpha = g.opacity;
        grads.raw_opacities[i] += acc.d_alpha_act * alpha * (1.0 - alpha);

        gsmath::sh_color_backward(
            cloud,
            i,
            &g.color,
            &acc.d_rgb,
            &mut grads.colors[i * basis..(i + 1) * basis],
            &mut grads.positions[i],
        );
    }
    Ok(grads)
}
