//! Losses, optimizer, metrics, dual-branch compositing, and the three-stage
//! training pipeline (static initialization → deformation → fine-tuning).

pub mod adam;
pub mod composite;
pub mod loss;
pub mod metrics;
pub mod ssim;
pub mod stages;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use composite::{composite_backward, composite_head};
pub use loss::{loss_finetune, loss_l1_dssim, HookRegistry, LossConfig};
pub use metrics::{psnr, ssim};
pub use stages::{run_stage_deform, run_stage_finetune, run_stage_static, DeformModel, MgfHead};

use serde::{Deserialize, Serialize};

use crate::deform::FrameFeatures;
use crate::gsmath::Camera;
use crate::image::Image;
use crate::densctl::DensifyConfig;
use crate::{Error, Result};

/// One supervised frame: a target image from one of the dataset cameras,
/// optional {0,1} region masks, and optional driving features.
#[derive(Clone, Debug)]
pub struct Frame {
    pub camera: usize,
    pub target: Image,
    pub face_mask: Option<Vec<f64>>,
    pub mouth_mask: Option<Vec<f64>>,
    pub features: Option<FrameFeatures>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("dataset has no frames".into()));
        }
        for f in &self.frames {
            let cam = self
                .cameras
                .get(f.camera)
                .ok_or_else(|| Error::InvalidConfig("frame camera index out of range".into()))?;
            if f.target.width != cam.width || f.target.height != cam.height {
                return Err(Error::ShapeMismatch("frame target vs camera size".into()));
            }
            let npix = cam.width * cam.height;
            for m in [&f.face_mask, &f.mouth_mask].into_iter().flatten() {
                if m.len() != npix {
                    return Err(Error::ShapeMismatch("mask vs camera size".into()));
                }
            }
            if let Some(feat) = &f.features {
                feat.validate()?;
            }
        }
        Ok(())
    }
}

/// Which frame mask supervises a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    Face,
    Mouth,
}

/// Constant learning rate per parameter group.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    pub encoder: f64,
    pub mgf: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2e-3,
            scale: 5e-3,
            rotation: 2e-3,
            opacity: 5e-2,
            color: 2.5e-2,
            encoder: 5e-4,
            mgf: 2.5e-4,
        }
    }
}

/// Stage lengths, group learning rates, densify policy and the seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub static_iters: usize,
    pub deform_iters: usize,
    pub finetune_iters: usize,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            static_iters: 2000,
            deform_iters: 1000,
            finetune_iters: 300,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let rs = [
            self.lr.position,
            self.lr.scale,
            self.lr.rotation,
            self.lr.opacity,
            self.lr.color,
            self.lr.encoder,
            self.lr.mgf,
        ];
        if rs.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig("learning rates must be ≥ 0".into()));
        }
        self.densify.validate()?;
        self.loss.validate()
    }
}

/// One training-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub stage: u8,
    pub loss: f64,
    pub psnr: f64,
    pub n_points: usize,
    pub densified: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,stage,loss,psnr,n_points,densified")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.iter, e.stage, e.loss, e.psnr, e.n_points, e.densified
            )?;
        }
        Ok(())
    }
}
