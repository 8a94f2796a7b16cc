//! Audio-driven deformation stack: position encoder, gated fusion modules
//! and the deformation application rule.
//!
//! Deformation touches position, scale and rotation only; opacity and color
//! coefficients pass through bitwise unchanged.

pub mod encoder;
pub mod mgf;
pub mod nn;

pub use encoder::{EncoderConfig, TriPlaneHashEncoder};
pub use mgf::{FaceCache, FaceDelta, MgfConfig, MgfFace, MgfMouth, MouthCache};

use crate::gsmath::GaussianCloud;
use crate::{Error, Result};

/// Per-frame driving features: audio vector f_a and a non-mouth expression
/// vector f_e.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub audio: Vec<f64>,
    pub expression: Vec<f64>,
}

impl FrameFeatures {
    pub fn validate(&self) -> Result<()> {
        if self
            .audio
            .iter()
            .chain(&self.expression)
            .any(|v| !v.is_finite())
        {
            return Err(Error::DegenerateInput("non-finite frame feature".into()));
        }
        Ok(())
    }
}

/// θ_D = {μ+Δμ, s+Δs, q+Δq, α, SH}: apply per-point deltas in raw parameter
/// space. The raw quaternion sum renormalizes on activation.
pub fn apply_deformation(cloud: &GaussianCloud, deltas: &[FaceDelta]) -> Result<GaussianCloud> {
    if deltas.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} deltas for {} Gaussians",
            deltas.len(),
            cloud.len()
        )));
    }
    let mut out = cloud.clone();
    for (i, d) in deltas.iter().enumerate() {
        out.positions[i] += d.d_position;
        out.raw_scales[i] += d.d_raw_scale;
        out.raw_rotations[i] += d.d_raw_rotation;
    }
    Ok(out)
}
