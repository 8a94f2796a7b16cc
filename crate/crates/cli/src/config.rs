//! JSON run configuration. Unknown keys are rejected in every section so a
//! config file is a complete, auditable record of an experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pgst_core::deform::{EncoderConfig, MgfConfig};
use pgst_core::densctl::DensifyConfig;
use pgst_core::gsmath::Camera;
use pgst_core::raster::RenderConfig;
use pgst_core::synth;
use pgst_core::train::TrainSchedule;
use pgst_core::{Error, Result};

/// Pinhole camera specified as a look-at rig.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            focal: 64.0,
            eye: [0.0, 0.0, -3.0],
            target: [0.0; 3],
        }
    }
}

impl CameraConfig {
    pub fn camera(&self) -> Camera {
        synth::lookat_camera(
            nalgebra::Vector3::from(self.eye),
            nalgebra::Vector3::from(self.target),
            self.width,
            self.height,
            self.focal,
        )
    }
}

/// Deformation-model sizing: the tri-plane encoder, the gated-fusion head,
/// and the driving-feature dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgfSection {
    pub encoder: EncoderConfig,
    pub head: MgfConfig,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub dim_audio: usize,
    pub dim_expr: usize,
    /// `true` selects the face head (Δμ, Δs, Δq); `false` the mouth head (Δμ).
    pub face_head: bool,
}

impl Default for MgfSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head: MgfConfig::default(),
            bbox_min: [-1.0, -1.0, -0.5],
            bbox_max: [1.0, 1.0, 0.5],
            dim_audio: 2,
            dim_expr: 2,
            face_head: false,
        }
    }
}

/// Which built-in synthetic dataset a fit-style command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    SelfReconstruction,
    ThinStripe,
    DeformRig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub seed: u64,
    /// Number of time steps for the audio-driven rig.
    pub frames: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::SelfReconstruction,
            seed: 0,
            frames: 16,
        }
    }
}

/// Top-level run configuration. The `densify` section takes precedence over
/// any `schedule.densify` value so densification is configured in one place.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub camera: CameraConfig,
    pub render: RenderConfig,
    pub densify: DensifyConfig,
    pub mgf: MgfSection,
    pub schedule: TrainSchedule,
    pub scene: SceneConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.densify.validate()?;
        self.schedule.validate()?;
        if self.camera.width == 0 || self.camera.height == 0 || self.camera.focal <= 0.0 {
            return Err(Error::InvalidConfig("camera dimensions/focal".into()));
        }
        Ok(())
    }

    /// The training schedule with the top-level densify section applied.
    pub fn assembled_schedule(&self) -> TrainSchedule {
        let mut s = self.schedule.clone();
        s.densify = self.densify.clone();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_yields_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.camera.width, 64);
        assert_eq!(cfg.scene.kind, SceneKind::SelfReconstruction);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"camera": {"width": 8, "depth": 9}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"densify": {"tau": 0.1}}"#).is_err());
    }

    #[test]
    fn densify_section_overrides_schedule() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"densify": {"tau_pos": 0.125}, "schedule": {"densify": {"tau_pos": 9.0}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.assembled_schedule().densify.tau_pos, 0.125);
    }
}
