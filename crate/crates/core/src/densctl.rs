//! Densification statistics and the split/clone/prune policies.
//!
//! Two scores gate densification of Gaussian i over the views it was validly
//! observed in:
//!
//! - baseline: mean NDC-gradient magnitude, (Σₖ ‖gₖ‖)/M
//! - pixel-aware: coverage-weighted mean, (Σₖ mₖ·‖gₖ‖)/(Σₖ mₖ)
//!
//! When per-view coverage is constant the two coincide exactly. A score
//! above `tau_pos` clones small Gaussians and splits large ones.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gsmath::{self, Camera, GaussianCloud};
use crate::raster::RenderArtifacts;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Baseline,
    PixelAware,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub tau_pos: f64,
    pub policy: Policy,
    pub interval: usize,
    pub start_iter: usize,
    pub stop_iter: usize,
    /// Fraction of the scene extent below which a dense Gaussian is cloned
    /// rather than split.
    pub split_scale_threshold: f64,
    /// Child scales are the parent's divided by this factor.
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub max_points: usize,
    /// Iterations between opacity clamp-downs; 0 disables (default).
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            tau_pos: 2e-4,
            policy: Policy::PixelAware,
            interval: 100,
            start_iter: 500,
            stop_iter: usize::MAX,
            split_scale_threshold: 0.01,
            split_factor: 1.6,
            prune_opacity: 0.005,
            max_points: 100_000,
            opacity_reset_interval: 0,
            opacity_reset_value: 0.01,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_pos <= 0.0 {
            return Err(Error::InvalidConfig("tau_pos must be > 0".into()));
        }
        if self.split_factor <= 0.0 {
            return Err(Error::InvalidConfig("split_factor must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-Gaussian running sums across views.
#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    /// Σₖ mₖ·‖gₖ‖
    pub sum_w_grad: Vec<f64>,
    /// Σₖ mₖ
    pub sum_m: Vec<f64>,
    /// Σₖ ‖gₖ‖
    pub sum_grad: Vec<f64>,
    /// Count of valid observations.
    pub views_seen: Vec<u32>,
    /// Smallest and largest observed ‖gₖ‖; both scores are convex
    /// combinations of the per-view norms, so the computed ratio is clamped
    /// into this interval to keep the bound exact under rounding.
    pub min_grad: Vec<f64>,
    pub max_grad: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum_w_grad: vec![0.0; n],
            sum_m: vec![0.0; n],
            sum_grad: vec![0.0; n],
            views_seen: vec![0; n],
            min_grad: vec![f64::INFINITY; n],
            max_grad: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sum_w_grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum_w_grad.is_empty()
    }

    /// Fold another accumulator in (commutative, associative).
    pub fn merge(&mut self, other: &DensifyStats) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::ShapeMismatch("densify stats length".into()));
        }
        for i in 0..self.len() {
            self.sum_w_grad[i] += other.sum_w_grad[i];
            self.sum_m[i] += other.sum_m[i];
            self.sum_grad[i] += other.sum_grad[i];
            self.views_seen[i] += other.views_seen[i];
            self.min_grad[i] = self.min_grad[i].min(other.min_grad[i]);
            self.max_grad[i] = self.max_grad[i].max(other.max_grad[i]);
        }
        Ok(())
    }

    /// Accumulate one rendered-and-backpropagated view. A Gaussian counts
    /// when it is valid, and (pixel-aware only) covered at least one pixel.
    pub fn accumulate(&mut self, artifacts: &RenderArtifacts, policy: Policy) -> Result<()> {
        if artifacts.per_gaussian.len() != self.len() {
            return Err(Error::ShapeMismatch("stats vs artifacts length".into()));
        }
        for (i, st) in artifacts.per_gaussian.iter().enumerate() {
            let observed = st.valid
                && match policy {
                    Policy::Baseline => true,
                    Policy::PixelAware => st.coverage > 0,
                };
            if !observed {
                continue;
            }
            let m = st.coverage as f64;
            let g = st.ndc_grad_norm;
            self.sum_w_grad[i] += m * g;
            self.sum_m[i] += m;
            self.sum_grad[i] += g;
            self.views_seen[i] += 1;
            self.min_grad[i] = self.min_grad[i].min(g);
            self.max_grad[i] = self.max_grad[i].max(g);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    None,
    Clone,
    Split,
}

#[derive(Clone, Copy, Debug)]
pub struct Decision {
    pub action: Action,
    pub score: f64,
}

/// Densification score of Gaussian `i` under `policy`; 0 when unobserved.
pub fn score(stats: &DensifyStats, i: usize, policy: Policy) -> f64 {
    if stats.views_seen[i] == 0 {
        return 0.0;
    }
    let raw = match policy {
        Policy::Baseline => stats.sum_grad[i] / stats.views_seen[i] as f64,
        Policy::PixelAware => {
            if stats.sum_m[i] == 0.0 {
                return 0.0;
            }
            stats.sum_w_grad[i] / stats.sum_m[i]
        }
    };
    raw.clamp(stats.min_grad[i], stats.max_grad[i])
}

/// Per-Gaussian clone/split decisions.
pub fn decide(
    stats: &DensifyStats,
    cloud: &GaussianCloud,
    cfg: &DensifyConfig,
    scene_extent: f64,
) -> Vec<Decision> {
    let n = cloud.len();
    assert_eq!(stats.len(), n, "stats length must match cloud");
    (0..n)
        .map(|i| {
            let s = score(stats, i, cfg.policy);
            if s <= cfg.tau_pos {
                return Decision {
                    action: Action::None,
                    score: s,
                };
            }
            let max_scale = cloud.activated_scale(i).max();
            let action = if max_scale <= cfg.split_scale_threshold * scene_extent {
                Action::Clone
            } else {
                Action::Split
            };
            Decision { action, score: s }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ApplyCounts {
    pub cloned: usize,
    pub split: usize,
}

/// Execute clone/split decisions. Clones are appended after the surviving
/// parents; split parents are replaced in place by two children drawn from
/// the parent's activated density. When the result would exceed
/// `max_points`, the lowest-scoring densify decisions are dropped first.
/// Deterministic for a fixed `rng_seed`.
pub fn apply(
    cloud: &GaussianCloud,
    decisions: &[Decision],
    cfg: &DensifyConfig,
    rng_seed: u64,
) -> Result<(GaussianCloud, ApplyCounts)> {
    let n = cloud.len();
    if decisions.len() != n {
        return Err(Error::ShapeMismatch("decisions length".into()));
    }
    // Budget: every clone or split grows the cloud by one.
    let mut active: Vec<bool> = decisions
        .iter()
        .map(|d| d.action != Action::None)
        .collect();
    let growth = active.iter().filter(|&&a| a).count();
    let budget = cfg.max_points.saturating_sub(n);
    if growth > budget {
        let mut ranked: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        ranked.sort_by(|&a, &b| {
            decisions[b]
                .score
                .partial_cmp(&decisions[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in ranked.iter().skip(budget) {
            active[i] = false;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = GaussianCloud::with_capacity(cloud.sh_degree, n + growth.min(budget));
    let mut clones: Vec<usize> = Vec::new();
    let mut counts = ApplyCounts::default();
    let ln_factor = cfg.split_factor.ln();
    for i in 0..n {
        let action = if active[i] {
            decisions[i].action
        } else {
            Action::None
        };
        match action {
            Action::None => out.push(
                cloud.positions[i],
                cloud.raw_scales[i],
                cloud.raw_rotations[i],
                cloud.raw_opacities[i],
                cloud.sh_coeffs(i),
            ),
            Action::Clone => {
                out.push(
                    cloud.positions[i],
                    cloud.raw_scales[i],
                    cloud.raw_rotations[i],
                    cloud.raw_opacities[i],
                    cloud.sh_coeffs(i),
                );
                clones.push(i);
                counts.cloned += 1;
            }
            Action::Split => {
                let rot = gsmath::quat_to_rotation(&cloud.raw_rotations[i])?;
                let scale = cloud.activated_scale(i);
                let child_raw_scale = cloud.raw_scales[i].map(|s| s - ln_factor);
                for _ in 0..2 {
                    let z = Vector3::from_fn(|_, _| {
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    });
                    let offset = rot * Matrix3::from_diagonal(&scale) * z;
                    out.push(
                        cloud.positions[i] + offset,
                        child_raw_scale,
                        cloud.raw_rotations[i],
                        cloud.raw_opacities[i],
                        cloud.sh_coeffs(i),
                    );
                }
                counts.split += 1;
            }
        }
    }
    for &i in &clones {
        out.push(
            cloud.positions[i],
            cloud.raw_scales[i],
            cloud.raw_rotations[i],
            cloud.raw_opacities[i],
            cloud.sh_coeffs(i),
        );
    }
    debug_assert!(out.len() <= cfg.max_points.max(n));
    Ok((out, counts))
}

/// Remove Gaussians that are nearly transparent or larger than the scene.
pub fn prune(
    cloud: &GaussianCloud,
    cfg: &DensifyConfig,
    scene_extent: f64,
) -> Result<(GaussianCloud, usize)> {
    let n = cloud.len();
    let keep: Vec<bool> = (0..n)
        .map(|i| {
            cloud.activated_opacity(i) >= cfg.prune_opacity
                && cloud.activated_scale(i).max() <= scene_extent
        })
        .collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(Error::PruneToEmpty);
    }
    let mut out = GaussianCloud::with_capacity(cloud.sh_degree, kept);
    for i in 0..n {
        if keep[i] {
            out.push(
                cloud.positions[i],
                cloud.raw_scales[i],
                cloud.raw_rotations[i],
                cloud.raw_opacities[i],
                cloud.sh_coeffs(i),
            );
        }
    }
    Ok((out, n - kept))
}

/// Clamp every raw opacity down to at most `value` (in activated space).
pub fn reset_opacity(cloud: &mut GaussianCloud, value: f64) {
    let cap = gsmath::logit(value);
    for o in &mut cloud.raw_opacities {
        if *o > cap {
            *o = cap;
        }
    }
}

/// Radius of the bounding sphere of the training-camera centers, measured
/// from their centroid. Degenerate rigs (single camera) fall back to 1.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers
        .iter()
        .map(|c| (c - centroid).norm())
        .fold(0.0, f64::max);
    if r < 1e-9 {
        1.0
    } else {
        r
    }
}

/// One densify-pass record for the append-only event log.
#[derive(Clone, Debug)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub policy: Policy,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub n_after: usize,
}

pub fn write_event_log_header<W: std::io::Write>(mut w: W) -> Result<()> {
    writeln!(w, "iteration,policy,n_clone,n_split,n_pruned,n_after")?;
    Ok(())
}

pub fn write_event<W: std::io::Write>(mut w: W, ev: &DensifyEvent) -> Result<()> {
    let policy = match ev.policy {
        Policy::Baseline => "baseline",
        Policy::PixelAware => "pixel_aware",
    };
    writeln!(
        w,
        "{},{},{},{},{},{}",
        ev.iteration, policy, ev.cloned, ev.split, ev.pruned, ev.n_after
    )?;
    Ok(())
}
