//! The three training stages.
//!
//! Stage 1 optimizes the static cloud θ_C under masked L1 + λ·D-SSIM with
//! periodic density control. Stage 2 freezes θ_C and trains the encoder and
//! gated-fusion head through the rendering chain; only position, scale and
//! rotation receive deltas. Stage 3 optimizes color coefficients of both
//! branches jointly through the head composite, with density frozen.

use nalgebra::{Vector3, Vector4};

use super::adam::{adam_step, AdamState, BETA1, BETA2, EPS};
use super::composite::{composite_backward, composite_head};
use super::loss::{loss_finetune, loss_l1_dssim, HookRegistry};
use super::metrics::psnr;
use super::{Dataset, Frame, LogEntry, MaskKind, TrainLog, TrainSchedule};
use crate::deform::{apply_deformation, FaceCache, FaceDelta, MgfFace, MgfMouth, MouthCache, TriPlaneHashEncoder};
use crate::densctl::{self, DensifyStats};
use crate::gsmath::GaussianCloud;
use crate::raster::{rasterize_backward, rasterize_forward, ParamGrads, RenderConfig};
use crate::{Error, Result};

/// The deformation head of one branch.
#[derive(Clone, Debug)]
pub enum MgfHead {
    Face(MgfFace),
    Mouth(MgfMouth),
}

/// Encoder + gated-fusion head trained in stage 2.
#[derive(Clone, Debug)]
pub struct DeformModel {
    pub encoder: TriPlaneHashEncoder,
    pub head: MgfHead,
}

impl DeformModel {
    /// Per-point deltas for one frame of driving features.
    pub fn deltas(
        &self,
        cloud: &GaussianCloud,
        audio: &[f64],
        expression: &[f64],
    ) -> Vec<FaceDelta> {
        let mut out = Vec::with_capacity(cloud.len());
        match &self.head {
            MgfHead::Face(face) => {
                let mut cache = FaceCache::default();
                for p in &cloud.positions {
                    let f_s = self.encoder.encode(p);
                    out.push(face.forward(&f_s, audio, expression, &mut cache));
                }
            }
            MgfHead::Mouth(mouth) => {
                let mut cache = MouthCache::default();
                for p in &cloud.positions {
                    let f_s = self.encoder.encode(p);
                    let d = mouth.forward(&f_s, audio, &mut cache);
                    out.push(FaceDelta {
                        d_position: d,
                        ..FaceDelta::default()
                    });
                }
            }
        }
        out
    }

    /// Flat head parameter vector (projection, gate, and MLP weights).
    pub fn mgf_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        match &self.head {
            MgfHead::Face(h) => h.collect_params(&mut v),
            MgfHead::Mouth(h) => h.collect_params(&mut v),
        }
        v
    }

    pub fn set_mgf_params(&mut self, flat: &[f64]) {
        let mut src = flat;
        match &mut self.head {
            MgfHead::Face(h) => h.assign_params(&mut src),
            MgfHead::Mouth(h) => h.assign_params(&mut src),
        }
        debug_assert!(src.is_empty());
    }
}

/// Stage-2 global-norm gradient clip.
const GRAD_CLIP: f64 = 1.0;

/// Scale a gradient vector down to `max_norm` if it exceeds it. Keeps one
/// bad frame from saturating the deformation MLP early in stage 2.
fn clip_by_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for v in g {
            *v *= s;
        }
    }
}

fn mask_of<'a>(frame: &'a Frame, kind: MaskKind) -> Option<&'a [f64]> {
    match kind {
        MaskKind::None => None,
        MaskKind::Face => frame.face_mask.as_deref(),
        MaskKind::Mouth => frame.mouth_mask.as_deref(),
    }
}

fn flat3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn unflat3(dst: &mut [Vector3<f64>], flat: &[f64]) {
    for (d, c) in dst.iter_mut().zip(flat.chunks_exact(3)) {
        *d = Vector3::new(c[0], c[1], c[2]);
    }
}

fn flat4(v: &[Vector4<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z, x.w]).collect()
}

fn unflat4(dst: &mut [Vector4<f64>], flat: &[f64]) {
    for (d, c) in dst.iter_mut().zip(flat.chunks_exact(4)) {
        *d = Vector4::new(c[0], c[1], c[2], c[3]);
    }
}

struct CloudStates {
    position: AdamState,
    scale: AdamState,
    rotation: AdamState,
    opacity: AdamState,
    color: AdamState,
}

impl CloudStates {
    fn new(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            position: AdamState::new("position", 3 * n),
            scale: AdamState::new("scale", 3 * n),
            rotation: AdamState::new("rotation", 4 * n),
            opacity: AdamState::new("opacity", n),
            color: AdamState::new("color", 3 * cloud.colors.len()),
        }
    }
}

fn step_cloud(
    cloud: &mut GaussianCloud,
    grads: &ParamGrads,
    states: &mut CloudStates,
    lr: &super::LearningRates,
) -> Result<()> {
    let betas = (BETA1, BETA2);
    let mut p = flat3(&cloud.positions);
    adam_step(&mut p, &flat3(&grads.positions), &mut states.position, lr.position, betas, EPS)?;
    unflat3(&mut cloud.positions, &p);

    let mut s = flat3(&cloud.raw_scales);
    adam_step(&mut s, &flat3(&grads.raw_scales), &mut states.scale, lr.scale, betas, EPS)?;
    unflat3(&mut cloud.raw_scales, &s);

    let mut q = flat4(&cloud.raw_rotations);
    adam_step(&mut q, &flat4(&grads.raw_rotations), &mut states.rotation, lr.rotation, betas, EPS)?;
    unflat4(&mut cloud.raw_rotations, &q);

    adam_step(
        &mut cloud.raw_opacities,
        &grads.raw_opacities,
        &mut states.opacity,
        lr.opacity,
        betas,
        EPS,
    )?;

    let mut c = flat3(&cloud.colors);
    adam_step(&mut c, &flat3(&grads.colors), &mut states.color, lr.color, betas, EPS)?;
    unflat3(&mut cloud.colors, &c);
    Ok(())
}

/// Stage 1: optimize the static cloud against masked targets with periodic
/// clone/split/prune. Returns the per-iteration log; `cloud` is updated in
/// place.
pub fn run_stage_static(
    cloud: &mut GaussianCloud,
    dataset: &Dataset,
    mask: MaskKind,
    schedule: &TrainSchedule,
    render_cfg: &RenderConfig,
) -> Result<TrainLog> {
    schedule.validate()?;
    dataset.validate()?;
    cloud.validate()?;
    let extent = densctl::scene_extent(&dataset.cameras);
    let dn = &schedule.densify;
    let mut states = CloudStates::new(cloud);
    let mut stats = DensifyStats::new(cloud.len());
    let mut log = TrainLog::default();

    for iter in 0..schedule.static_iters {
        let frame = &dataset.frames[iter % dataset.frames.len()];
        let cam = &dataset.cameras[frame.camera];
        let mut artifacts = rasterize_forward(cloud, cam, render_cfg)?;
        let (loss, dimg) =
            loss_l1_dssim(&artifacts.image, &frame.target, mask_of(frame, mask), schedule.loss.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter,
                reason: "non-finite loss".into(),
            });
        }
        let grads = rasterize_backward(cloud, cam, render_cfg, &mut artifacts, &dimg)?;
        stats.accumulate(&artifacts, dn.policy)?;
        step_cloud(cloud, &grads, &mut states, &schedule.lr)?;

        let mut densified = 0;
        let it1 = iter + 1;
        if it1 >= dn.start_iter
            && it1 <= dn.stop_iter
            && it1 < schedule.static_iters
            && (it1 - dn.start_iter) % dn.interval == 0
        {
            let decisions = densctl::decide(&stats, cloud, dn, extent);
            let (dense, counts) =
                densctl::apply(cloud, &decisions, dn, schedule.seed ^ it1 as u64)?;
            let (pruned_cloud, pruned) = densctl::prune(&dense, dn, extent)?;
            *cloud = pruned_cloud;
            densified = counts.cloned + counts.split + pruned;
            if dn.opacity_reset_interval > 0 && it1 % dn.opacity_reset_interval == 0 {
                densctl::reset_opacity(cloud, dn.opacity_reset_value);
            }
            states = CloudStates::new(cloud);
            stats = DensifyStats::new(cloud.len());
        }

        log.entries.push(LogEntry {
            iter,
            stage: 1,
            loss,
            psnr: psnr(&artifacts.image, &frame.target),
            n_points: cloud.len(),
            densified,
        });
    }
    Ok(log)
}

/// Stage 2: train encoder + MGF head through the render; the base cloud is
/// frozen (opacity and color bitwise untouched by construction of
/// [`apply_deformation`]).
pub fn run_stage_deform(
    cloud: &GaussianCloud,
    model: &mut DeformModel,
    dataset: &Dataset,
    mask: MaskKind,
    schedule: &TrainSchedule,
    render_cfg: &RenderConfig,
) -> Result<TrainLog> {
    schedule.validate()?;
    dataset.validate()?;
    cloud.validate()?;
    if dataset.frames.iter().any(|f| f.features.is_none()) {
        return Err(Error::InvalidConfig(
            "deformation stage needs per-frame features".into(),
        ));
    }
    let betas = (BETA1, BETA2);
    let mut enc_state = AdamState::new("encoder", model.encoder.tables.len());
    let mut mgf_state = AdamState::new("mgf", model.mgf_params().len());
    let mut log = TrainLog::default();

    for iter in 0..schedule.deform_iters {
        let frame = &dataset.frames[iter % dataset.frames.len()];
        let cam = &dataset.cameras[frame.camera];
        let feat = frame.features.as_ref().unwrap();

        // Forward: encode → head → deform → render, keeping per-point caches.
        let n = cloud.len();
        let mut f_s_all = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        let mut face_caches: Vec<FaceCache> = Vec::new();
        let mut mouth_caches: Vec<MouthCache> = Vec::new();
        for p in &cloud.positions {
            let f_s = model.encoder.encode(p);
            match &model.head {
                MgfHead::Face(h) => {
                    let mut cache = FaceCache::default();
                    deltas.push(h.forward(&f_s, &feat.audio, &feat.expression, &mut cache));
                    face_caches.push(cache);
                }
                MgfHead::Mouth(h) => {
                    let mut cache = MouthCache::default();
                    let d = h.forward(&f_s, &feat.audio, &mut cache);
                    deltas.push(FaceDelta {
                        d_position: d,
                        ..FaceDelta::default()
                    });
                    mouth_caches.push(cache);
                }
            }
            f_s_all.push(f_s);
        }
        let deformed = apply_deformation(cloud, &deltas)?;
        let mut artifacts = rasterize_forward(&deformed, cam, render_cfg)?;
        let (loss, dimg) =
            loss_l1_dssim(&artifacts.image, &frame.target, mask_of(frame, mask), schedule.loss.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter,
                reason: "non-finite loss".into(),
            });
        }
        let grads = rasterize_backward(&deformed, cam, render_cfg, &mut artifacts, &dimg)?;

        // Backward into the head and encoder; deltas are additive, so the
        // deformed-cloud gradients are the delta gradients.
        let mut table_grads = vec![0.0; model.encoder.tables.len()];
        let mut head_grads = match &model.head {
            MgfHead::Face(h) => MgfHead::Face(h.zeros_like()),
            MgfHead::Mouth(h) => MgfHead::Mouth(h.zeros_like()),
        };
        for i in 0..n {
            let d_fs = match (&model.head, &mut head_grads) {
                (MgfHead::Face(h), MgfHead::Face(g)) => {
                    let d_out = FaceDelta {
                        d_position: grads.positions[i],
                        d_raw_scale: grads.raw_scales[i],
                        d_raw_rotation: grads.raw_rotations[i],
                    };
                    h.backward(&feat.audio, &feat.expression, &face_caches[i], &d_out, g).0
                }
                (MgfHead::Mouth(h), MgfHead::Mouth(g)) => {
                    h.backward(&f_s_all[i], &feat.audio, &mouth_caches[i], &grads.positions[i], g).0
                }
                _ => unreachable!(),
            };
            let mut d_pos = Vector3::zeros();
            model
                .encoder
                .encode_backward(&cloud.positions[i], &d_fs, &mut table_grads, &mut d_pos);
        }

        clip_by_norm(&mut table_grads, GRAD_CLIP);
        adam_step(
            &mut model.encoder.tables,
            &table_grads,
            &mut enc_state,
            schedule.lr.encoder,
            betas,
            EPS,
        )?;
        let mut mgf_params = model.mgf_params();
        let mut mgf_grads = {
            let mut v = Vec::new();
            match &head_grads {
                MgfHead::Face(g) => g.collect_params(&mut v),
                MgfHead::Mouth(g) => g.collect_params(&mut v),
            }
            v
        };
        clip_by_norm(&mut mgf_grads, GRAD_CLIP);
        adam_step(&mut mgf_params, &mgf_grads, &mut mgf_state, schedule.lr.mgf, betas, EPS)?;
        model.set_mgf_params(&mgf_params);

        log.entries.push(LogEntry {
            iter,
            stage: 2,
            loss,
            psnr: psnr(&artifacts.image, &frame.target),
            n_points: n,
            densified: 0,
        });
    }
    Ok(log)
}

/// Stage 3: joint color-only fine-tuning of both branches through the head
/// composite. Positions/scales/rotations/opacities and N stay fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_stage_finetune(
    face_cloud: &mut GaussianCloud,
    mouth_cloud: &mut GaussianCloud,
    dataset: &Dataset,
    schedule: &TrainSchedule,
    face_cfg: &RenderConfig,
    mouth_cfg: &RenderConfig,
    registry: &HookRegistry,
) -> Result<TrainLog> {
    schedule.validate()?;
    dataset.validate()?;
    face_cloud.validate()?;
    mouth_cloud.validate()?;
    // The face branch must composite over the mouth, so its own render uses
    // a black background regardless of the configured one.
    let face_cfg = RenderConfig {
        background: [0.0; 3],
        ..face_cfg.clone()
    };
    let betas = (BETA1, BETA2);
    let mut face_state = AdamState::new("face_color", 3 * face_cloud.colors.len());
    let mut mouth_state = AdamState::new("mouth_color", 3 * mouth_cloud.colors.len());
    let mut log = TrainLog::default();

    for iter in 0..schedule.finetune_iters {
        let frame = &dataset.frames[iter % dataset.frames.len()];
        let cam = &dataset.cameras[frame.camera];
        let mut face_art = rasterize_forward(face_cloud, cam, &face_cfg)?;
        let mut mouth_art = rasterize_forward(mouth_cloud, cam, mouth_cfg)?;
        let head = composite_head(&face_art, &mouth_art)?;
        let (loss, dimg) = loss_finetune(&head, &frame.target, &schedule.loss, registry)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter,
                reason: "non-finite loss".into(),
            });
        }
        let (d_face, d_mouth) = composite_backward(&face_art, &dimg);
        let gf = rasterize_backward(face_cloud, cam, &face_cfg, &mut face_art, &d_face)?;
        let gm = rasterize_backward(mouth_cloud, cam, mouth_cfg, &mut mouth_art, &d_mouth)?;

        let mut c = flat3(&face_cloud.colors);
        adam_step(&mut c, &flat3(&gf.colors), &mut face_state, schedule.lr.color, betas, EPS)?;
        unflat3(&mut face_cloud.colors, &c);
        let mut c = flat3(&mouth_cloud.colors);
        adam_step(&mut c, &flat3(&gm.colors), &mut mouth_state, schedule.lr.color, betas, EPS)?;
        unflat3(&mut mouth_cloud.colors, &c);

        log.entries.push(LogEntry {
            iter,
            stage: 3,
            loss,
            psnr: psnr(&head, &frame.target),
            n_points: face_cloud.len() + mouth_cloud.len(),
            densified: 0,
        });
    }
    Ok(log)
}
