//! Tile-based front-to-back alpha compositing with an analytic backward pass.
//!
//! Forward recurrence per pixel (Gaussians depth-sorted, ties by index):
//!
//!   C = Σᵢ cᵢ aᵢ Tᵢ + T_N·bg,   Tᵢ₊₁ = Tᵢ (1 − aᵢ),   T₀ = 1
//!
//! with aᵢ = min(αᵢ·exp(−½ dᵀΣ₂d⁻¹d), 0.99). A contribution exists only when
//! the pixel center lies strictly inside the Gaussian's radius disc, the
//! evaluated alpha reaches `alpha_min`, and the incoming transmittance is at
//! least `transmittance_min`. The brute-force reference renderer applies the
//! identical per-pixel predicate with no tiling, so the two agree bitwise.
//!
//! The per-pixel contribution structure (which Gaussian touched which pixel,
//! and whether its alpha clamped) is folded into `structure_hash`; the
//! finite-difference harness uses it to exclude parameters sitting on a
//! threshold discontinuity.

mod backward;
mod forward;
mod reference;

pub use backward::{rasterize_backward, ParamGrads};
pub use forward::rasterize_forward;
pub use reference::{rasterize_reference, REFERENCE_CAP_DEFAULT};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::gsmath::{self, Camera, GaussianCloud, Projected2D, ShColor};
use crate::image::Image;
use crate::{Error, Result};

/// Rasterizer configuration; thresholds implement the coverage validity
/// conditions as well as the compositing cutoffs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub tile_size: usize,
    pub background: [f64; 3],
    pub alpha_min: f64,
    pub transmittance_min: f64,
    pub count_coverage: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            background: [0.0; 3],
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            count_coverage: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig("tile_size must be >= 1".into()));
        }
        for (name, v) in [
            ("alpha_min", self.alpha_min),
            ("transmittance_min", self.transmittance_min),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0,1)")));
            }
        }
        Ok(())
    }
}

/// Per-Gaussian per-view bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct GaussianViewStats {
    pub radius_px: f64,
    /// Pixel-coverage count m.
    pub coverage: u32,
    /// Depth/bounds validity (radius > 0, depth > 0.2, center within the
    /// radius-expanded image rectangle).
    pub valid: bool,
    pub culled: bool,
    /// ‖∂L/∂μ_ndc‖, filled by the backward pass.
    pub ndc_grad_norm: f64,
}

/// Rendered image plus everything densification and the backward pass need.
#[derive(Clone, Debug)]
pub struct RenderArtifacts {
    pub image: Image,
    pub final_transmittance: Vec<f64>,
    pub per_gaussian: Vec<GaussianViewStats>,
    /// Hash of the discrete contribution structure; changes exactly when a
    /// threshold (disc, alpha floor, transmittance cutoff, clamp) flips.
    pub structure_hash: u64,
}

/// Depth filter of the validity test (a fixed constant, deliberately not the
/// camera near plane).
pub const VALID_DEPTH_MIN: f64 = 0.2;

/// One projected, activated Gaussian ready for shading, in composition order.
pub(crate) struct Prepared {
    pub idx: usize,
    pub proj: Projected2D,
    pub inv_cov: Matrix2<f64>,
    pub opacity: f64,
    pub color: ShColor,
    pub valid: bool,
}

/// Project, activate and depth-sort the cloud for one view. Culled Gaussians
/// are dropped from the composition order but still reported in `stats`.
pub(crate) fn prepare_view(
    cloud: &GaussianCloud,
    camera: &Camera,
) -> (Vec<Prepared>, Vec<GaussianViewStats>) {
    let n = cloud.len();
    let cam_center = camera.center();
    let w = camera.width as f64;
    let h = camera.height as f64;
    let mut stats = vec![GaussianViewStats::default(); n];
    let mut prepared = Vec::with_capacity(n);
    for i in 0..n {
        let cov3d = gsmath::build_covariance(&cloud.raw_scales[i], &cloud.raw_rotations[i])
            .expect("cloud validated before rendering");
        let proj = gsmath::project(&cloud.positions[i], &cov3d, camera);
        let st = &mut stats[i];
        st.culled = proj.culled;
        st.radius_px = if proj.culled { 0.0 } else { proj.radius_px };
        if proj.culled {
            continue;
        }
        let r = proj.radius_px;
        st.valid = r > 0.0
            && proj.depth_cam > VALID_DEPTH_MIN
            && (-r - 0.5 < proj.center_px.x && proj.center_px.x < r + w - 0.5)
            && (-r - 0.5 < proj.center_px.y && proj.center_px.y < r + h - 0.5);
        let det = proj.cov2d.determinant();
        debug_assert!(det > 0.0, "low-pass term guarantees positive definiteness");
        let inv_cov = Matrix2::new(
            proj.cov2d[(1, 1)],
            -proj.cov2d[(0, 1)],
            -proj.cov2d[(1, 0)],
            proj.cov2d[(0, 0)],
        ) / det;
        prepared.push(Prepared {
            idx: i,
            inv_cov,
            opacity: cloud.activated_opacity(i),
            color: gsmath::eval_sh_color(cloud, i, &cam_center),
            valid: stats[i].valid,
            proj,
        });
    }
    prepared.sort_by(|a, b| {
        a.proj
            .depth_cam
            .partial_cmp(&b.proj.depth_cam)
            .unwrap()
            .then(a.idx.cmp(&b.idx))
    });
    (prepared, stats)
}

/// One accepted compositing event at a pixel.
#[derive(Clone, Copy)]
pub(crate) struct Contribution {
    /// Index into the prepared (sorted) list.
    pub slot: usize,
    pub alpha: f64,
    pub weight: f64,
    pub clamped: bool,
    pub transmittance_before: f64,
}

/// Walk the composition order at one pixel, invoking `sink` for every
/// accepted contribution. Returns the final transmittance.
#[inline]
pub(crate) fn composite_pixel(
    prepared: &[Prepared],
    order: &[usize],
    px: f64,
    py: f64,
    cfg: &RenderConfig,
    mut sink: impl FnMut(&Contribution),
) -> f64 {
    let mut t = 1.0f64;
    for &slot in order {
        let g = &prepared[slot];
        let d = Vector2::new(px - g.proj.center_px.x, py - g.proj.center_px.y);
        if d.norm_squared() >= g.proj.radius_px * g.proj.radius_px {
            continue;
        }
        let power = -0.5 * (d.transpose() * g.inv_cov * d)[(0, 0)];
        let weight = power.exp();
        let raw_alpha = g.opacity * weight;
        let clamped = raw_alpha > 0.99;
        let alpha = if clamped { 0.99 } else { raw_alpha };
        if alpha < cfg.alpha_min {
            continue;
        }
        sink(&Contribution {
            slot,
            alpha,
            weight,
            clamped,
            transmittance_before: t,
        });
        t *= 1.0 - alpha;
        if t < cfg.transmittance_min {
            break;
        }
    }
    t
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

#[inline]
pub(crate) fn fnv_fold(hash: u64, value: u64) -> u64 {
    let mut h = hash;
    for byte in value.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub(crate) fn fnv_start() -> u64 {
    FNV_OFFSET
}

/// Fold per-Gaussian color clamp flags into the structure hash so clamp
/// flips count as discontinuities.
pub(crate) fn fold_color_clamps(mut hash: u64, prepared: &[Prepared]) -> u64 {
    for g in prepared {
        let flags = (g.color.clamped[0] as i64 & 0xff) as u64
            | (((g.color.clamped[1] as i64 & 0xff) as u64) << 8)
            | (((g.color.clamped[2] as i64 & 0xff) as u64) << 16)
            | ((g.idx as u64) << 24);
        hash = fnv_fold(hash, flags);
    }
    hash
}

/// Write the per-Gaussian densify stats of one render as CSV.
pub fn dump_stats_csv<W: std::io::Write>(artifacts: &RenderArtifacts, mut w: W) -> Result<()> {
    writeln!(w, "index,valid,radius_px,coverage,ndc_grad_norm")?;
    for (i, st) in artifacts.per_gaussian.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i, st.valid as u8, st.radius_px, st.coverage, st.ndc_grad_norm
        )?;
    }
    Ok(())
}
