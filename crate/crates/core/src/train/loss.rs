//! Photometric losses: masked L1 + λ·D-SSIM, and the fine-tuning loss with
//! an optional perceptual hook.
//!
//! D-SSIM = (1 − SSIM)/2. Masking multiplies both images by the {0,1} mask
//! before either term; the L1 term averages over masked pixels only.

use std::collections::HashMap;

use super::ssim::ssim_with_grad;
use crate::image::Image;
use crate::{Error, Result};

/// Weights for the composite losses. `perceptual = None` disables the hook.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub perceptual: Option<String>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            gamma: 0.05,
            perceptual: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.gamma < 0.0 || !self.lambda.is_finite() || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig("loss weights must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// A perceptual term: maps (pred, target) to a scalar and dL/dpred.
pub type PerceptualFn = Box<dyn Fn(&Image, &Image) -> (f64, Image) + Send + Sync>;

/// Named perceptual hooks; empty by default.
#[derive(Default)]
pub struct HookRegistry {
    hooks: HashMap<String, PerceptualFn>,
}

impl HookRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, f: PerceptualFn) {
        self.hooks.insert(id.into(), f);
    }

    pub fn get(&self, id: &str) -> Result<&PerceptualFn> {
        self.hooks
            .get(id)
            .ok_or_else(|| Error::UnknownHook(id.to_string()))
    }
}

fn apply_mask(img: &Image, mask: &[f64]) -> Image {
    let mut out = img.clone();
    for (p, &m) in out.pixels.iter_mut().zip(mask) {
        for c in p.iter_mut() {
            *c *= m;
        }
    }
    out
}

/// L = L1(pred⊙mask, target⊙mask) + λ·(1 − SSIM(pred⊙mask, target⊙mask))/2,
/// returning the analytic dL/dpred.
pub fn loss_l1_dssim(
    pred: &Image,
    target: &Image,
    mask: Option<&[f64]>,
    lambda: f64,
) -> Result<(f64, Image)> {
    if pred.width != target.width || pred.height != target.height {
        return Err(Error::ShapeMismatch("loss image shapes differ".into()));
    }
    let npix = pred.pixels.len();
    if let Some(m) = mask {
        if m.len() != npix {
            return Err(Error::ShapeMismatch("mask shape differs from images".into()));
        }
    }
    let ones;
    let mask: &[f64] = match mask {
        Some(m) => m,
        None => {
            ones = vec![1.0; npix];
            &ones
        }
    };
    let active: f64 = mask.iter().sum();
    if active == 0.0 {
        return Err(Error::EmptyMask);
    }

    let mut grad = Image::new(pred.width, pred.height);
    let mut l1 = 0.0;
    let inv = 1.0 / (3.0 * active);
    for (p, (pa, pb)) in pred.pixels.iter().zip(&target.pixels).enumerate() {
        if mask[p] == 0.0 {
            continue;
        }
        for c in 0..3 {
            let d = pa[c] - pb[c];
            l1 += d.abs() * inv;
            // signum(0) is 1 in IEEE terms; the subgradient at 0 is 0.
            grad.pixels[p][c] = if d == 0.0 { 0.0 } else { d.signum() * inv };
        }
    }

    let mut loss = l1;
    if lambda != 0.0 {
        let xm = apply_mask(pred, mask);
        let ym = apply_mask(target, mask);
        let (s, ds) = ssim_with_grad(&xm, &ym, true);
        loss += lambda * (1.0 - s) / 2.0;
        for (p, g) in grad.pixels.iter_mut().enumerate() {
            for c in 0..3 {
                g[c] += -0.5 * lambda * ds.pixels[p][c] * mask[p];
            }
        }
    }
    Ok((loss, grad))
}

/// L = L1 + λ·D-SSIM + γ·hook(pred, target), unmasked.
pub fn loss_finetune(
    pred: &Image,
    target: &Image,
    cfg: &LossConfig,
    registry: &HookRegistry,
) -> Result<(f64, Image)> {
    let (mut loss, mut grad) = loss_l1_dssim(pred, target, None, cfg.lambda)?;
    if cfg.gamma != 0.0 {
        if let Some(id) = &cfg.perceptual {
            let hook = registry.get(id)?;
            let (hv, hg) = hook(pred, target);
            loss += cfg.gamma * hv;
            for (g, h) in grad.pixels.iter_mut().zip(&hg.pixels) {
                for c in 0..3 {
                    g[c] += cfg.gamma * h[c];
                }
            }
        }
    } else if let Some(id) = &cfg.perceptual {
        registry.get(id)?;
    }
    Ok((loss, grad))
}
