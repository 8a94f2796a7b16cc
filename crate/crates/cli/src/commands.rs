//! Subcommand implementations. Every command is deterministic given the
//! config file and seed; checkpoints are written atomically.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgst_core::deform::{apply_deformation, MgfFace, MgfMouth, TriPlaneHashEncoder};
use pgst_core::densctl::{score, DensifyStats, Policy};
use pgst_core::gsmath::GaussianCloud;
use pgst_core::image::Image;
use pgst_core::io::{self, FeatureSequence};
use pgst_core::raster::{rasterize_backward, rasterize_forward, RenderConfig};
use pgst_core::synth;
use pgst_core::train::{
    composite_head, loss_l1_dssim, metrics, psnr, run_stage_deform, run_stage_finetune,
    run_stage_static, Dataset, DeformModel, HookRegistry, MaskKind, MgfHead, TrainLog,
};
use pgst_core::{Error, Result};

use crate::checkpoint;
use crate::config::{RunConfig, SceneKind};
use crate::pngio;

fn build_model(cfg: &RunConfig, seed: u64) -> DeformModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_64656c);
    let m = &cfg.mgf;
    let encoder = TriPlaneHashEncoder::new(
        &m.encoder,
        nalgebra::Vector3::from(m.bbox_min),
        nalgebra::Vector3::from(m.bbox_max),
        &mut rng,
    );
    let head = if m.face_head {
        MgfHead::Face(MgfFace::new(
            &m.head,
            encoder.output_dim(),
            m.dim_audio,
            m.dim_expr,
            true,
            &mut rng,
        ))
    } else {
        MgfHead::Mouth(MgfMouth::new(
            &m.head,
            encoder.output_dim(),
            m.dim_audio,
            true,
            &mut rng,
        ))
    };
    DeformModel { encoder, head }
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    io::write_atomic(path, &buf)
}

fn render_preview(
    cloud: &GaussianCloud,
    dataset: &Dataset,
    render_cfg: &RenderConfig,
    path: &Path,
) -> Result<()> {
    let art = rasterize_forward(cloud, &dataset.cameras[0], render_cfg)?;
    pngio::write_png(path, &art.image)
}

/// `fit`: run the requested stages of the three-stage pipeline on the
/// configured synthetic scene and write checkpoints, logs, and a preview.
pub fn fit(cfg: &RunConfig, out: &Path, stages: &[u8]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let schedule = cfg.assembled_schedule();
    let seed = cfg.scene.seed;
    let (mut cloud, dataset): (GaussianCloud, Dataset) = match cfg.scene.kind {
        SceneKind::SelfReconstruction => {
            let s = synth::self_reconstruction(seed)?;
            (s.init, s.dataset)
        }
        SceneKind::ThinStripe => {
            let s = synth::thin_stripe(seed)?;
            (s.init, s.dataset)
        }
        SceneKind::DeformRig => {
            let r = synth::deform_rig(seed, cfg.scene.frames)?;
            // Emit the driving features so `render`/`animate` can replay them.
            let frames: Vec<_> = r.audio_scalars.iter().map(|&a| synth::rig_features(a)).collect();
            let seq = FeatureSequence {
                dim_audio: 2,
                dim_expr: 2,
                frames,
            };
            io::write_atomic(&out.join("features.pgsf"), &io::write_features(&seq)?)?;
            (r.base, r.dataset)
        }
    };
    let mut log = TrainLog::default();
    let cloud_path = out.join("face.ply");

    if stages.contains(&1) {
        match run_stage_static(&mut cloud, &dataset, MaskKind::None, &schedule, &cfg.render) {
            Ok(l) => log.entries.extend(l.entries),
            Err(e) => {
                checkpoint::save_cloud(&cloud_path, &cloud)?;
                return Err(e);
            }
        }
    }
    if stages.contains(&2) {
        if dataset.frames.iter().any(|f| f.features.is_none()) {
            return Err(Error::InvalidConfig(
                "stage 2 requires a scene with driving features (scene.kind = deform_rig)".into(),
            ));
        }
        let mut model = build_model(cfg, schedule.seed);
        match run_stage_deform(&cloud, &mut model, &dataset, MaskKind::None, &schedule, &cfg.render)
        {
            Ok(l) => log.entries.extend(l.entries),
            Err(e) => {
                checkpoint::save_cloud(&cloud_path, &cloud)?;
                checkpoint::save_model(&out.join("model.pgsw"), &model)?;
                return Err(e);
            }
        }
        checkpoint::save_model(&out.join("model.pgsw"), &model)?;
    }
    if stages.contains(&3) {
        let cam = &dataset.cameras[0];
        let mut mouth = synth::random_scene(seed ^ 0x6d_6f75, 8, cam.width, cam.height).0;
        let face_cfg = RenderConfig {
            background: [0.0; 3],
            ..cfg.render.clone()
        };
        match run_stage_finetune(
            &mut cloud,
            &mut mouth,
            &dataset,
            &schedule,
            &face_cfg,
            &cfg.render,
            &HookRegistry::new(),
        ) {
            Ok(l) => log.entries.extend(l.entries),
            Err(e) => {
                checkpoint::save_cloud(&cloud_path, &cloud)?;
                checkpoint::save_cloud(&out.join("mouth.ply"), &mouth)?;
                return Err(e);
            }
        }
        checkpoint::save_cloud(&out.join("mouth.ply"), &mouth)?;
    }

    checkpoint::save_cloud(&cloud_path, &cloud)?;
    write_log(&out.join("log.csv"), &log)?;
    render_preview(&cloud, &dataset, &cfg.render, &out.join("preview.png"))?;
    if let Some(last) = log.entries.last() {
        println!(
            "fit: {} iterations, final loss {:.6}, psnr {:.2} dB, {} points",
            log.entries.len(),
            last.loss,
            last.psnr,
            last.n_points
        );
    } else {
        println!("fit: no stages requested; wrote initialization");
    }
    Ok(())
}

fn deformed(
    cloud: &GaussianCloud,
    model: &Option<DeformModel>,
    features: &Option<FeatureSequence>,
    frame: usize,
) -> Result<GaussianCloud> {
    match (model, features) {
        (None, None) => Ok(cloud.clone()),
        (Some(m), Some(f)) => {
            let fr = f.frames.get(frame).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "frame {frame} out of range ({} frames)",
                    f.frames.len()
                ))
            })?;
            let deltas = m.deltas(cloud, &fr.audio, &fr.expression);
            apply_deformation(cloud, &deltas)
        }
        _ => Err(Error::InvalidConfig(
            "--model and --features must be given together".into(),
        )),
    }
}

/// `render`: one PNG from a cloud (optionally deformed), or the dual-branch
/// composite when both --face and --mouth are given.
#[allow(clippy::too_many_arguments)]
pub fn render(
    cfg: &RunConfig,
    out: &Path,
    ply: Option<&Path>,
    face: Option<&Path>,
    mouth: Option<&Path>,
    model_path: Option<&Path>,
    features_path: Option<&Path>,
    frame: usize,
) -> Result<()> {
    let cam = cfg.camera.camera();
    let model = model_path.map(checkpoint::load_model).transpose()?;
    let features = features_path
        .map(|p| io::read_features(&std::fs::read(p)?))
        .transpose()?;
    let img: Image = match (ply, face, mouth) {
        (Some(p), None, None) => {
            let cloud = deformed(&checkpoint::load_cloud(p)?, &model, &features, frame)?;
            rasterize_forward(&cloud, &cam, &cfg.render)?.image
        }
        (None, Some(f), Some(m)) => {
            let face_cloud = deformed(&checkpoint::load_cloud(f)?, &model, &features, frame)?;
            let mouth_cloud = checkpoint::load_cloud(m)?;
            let face_cfg = RenderConfig {
                background: [0.0; 3],
                ..cfg.render.clone()
            };
            let face_art = rasterize_forward(&face_cloud, &cam, &face_cfg)?;
            let mouth_art = rasterize_forward(&mouth_cloud, &cam, &cfg.render)?;
            composite_head(&face_art, &mouth_art)?
        }
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(Error::InvalidConfig(
                "compositing needs both branches: pass --face and --mouth together".into(),
            ))
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass either --ply, or --face with --mouth".into(),
            ))
        }
    };
    pngio::write_png(out, &img)
}

/// `animate`: one numbered PNG per frame of the feature sequence.
pub fn animate(
    cfg: &RunConfig,
    out: &Path,
    ply: &Path,
    model_path: &Path,
    features_path: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let cam = cfg.camera.camera();
    let cloud = checkpoint::load_cloud(ply)?;
    let model = Some(checkpoint::load_model(model_path)?);
    let features = Some(io::read_features(&std::fs::read(features_path)?)?);
    let n = features.as_ref().unwrap().frames.len();
    for i in 0..n {
        let frame_cloud = deformed(&cloud, &model, &features, i)?;
        let art = rasterize_forward(&frame_cloud, &cam, &cfg.render)?;
        pngio::write_png(&out.join(format!("frame_{i:04}.png")), &art.image)?;
    }
    println!("animate: wrote {n} frames to {}", out.display());
    Ok(())
}

/// `compare-densify`: two identical thin-stripe fits differing only in the
/// densification policy; writes a CSV report and both final renders.
pub fn compare_densify(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let scene = synth::thin_stripe(cfg.scene.seed)?;
    let mut report = String::from("policy,n_points,psnr,psnr_stripe,ssim,densify_events\n");
    for (policy, name) in [(Policy::Baseline, "baseline"), (Policy::PixelAware, "pixel_aware")] {
        let mut schedule = cfg.assembled_schedule();
        schedule.densify.policy = policy;
        let mut cloud = scene.init.clone();
        let log = run_stage_static(
            &mut cloud,
            &scene.dataset,
            MaskKind::None,
            &schedule,
            &cfg.render,
        )?;
        let cam = &scene.dataset.cameras[scene.eval_camera];
        let art = rasterize_forward(&cloud, cam, &cfg.render)?;
        let target = &scene.dataset.frames[scene.eval_camera].target;
        let events: usize = log.entries.iter().map(|e| e.densified).sum();
        report.push_str(&format!(
            "{name},{},{:.4},{:.4},{:.6},{events}\n",
            cloud.len(),
            psnr(&art.image, target),
            metrics::psnr_masked(&art.image, target, &scene.stripe_mask),
            metrics::ssim(&art.image, target),
        ));
        pngio::write_png(&out.join(format!("{name}.png")), &art.image)?;
        checkpoint::save_cloud(&out.join(format!("{name}.ply")), &cloud)?;
    }
    io::write_atomic(&out.join("report.csv"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

/// `gradcheck`: the full finite-difference suites; returns whether all
/// parameter classes stayed within tolerance.
pub fn gradcheck(instances: usize) -> Result<bool> {
    let reports = pgst_core::gradcheck::suites::run_all(instances)?;
    let mut ok = true;
    for r in &reports {
        let pass = r.passes(1e-3);
        ok &= pass;
        println!(
            "{:24} max_rel_err {:.3e}  checked {:5}  excluded {:4}  {}",
            r.label,
            r.max_rel_err,
            r.checked,
            r.excluded,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(ok)
}

/// `stats`: per-Gaussian densification statistics of the configured scene's
/// initialization, accumulated over every dataset view.
pub fn stats(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let (cloud, dataset): (GaussianCloud, Dataset) = match cfg.scene.kind {
        SceneKind::SelfReconstruction => {
            let s = synth::self_reconstruction(cfg.scene.seed)?;
            (s.init, s.dataset)
        }
        SceneKind::ThinStripe => {
            let s = synth::thin_stripe(cfg.scene.seed)?;
            (s.init, s.dataset)
        }
        SceneKind::DeformRig => {
            let r = synth::deform_rig(cfg.scene.seed, cfg.scene.frames)?;
            (r.base, r.dataset)
        }
    };
    let mut acc = DensifyStats::new(cloud.len());
    for frame in &dataset.frames {
        let cam = &dataset.cameras[frame.camera];
        let mut art = rasterize_forward(&cloud, cam, &cfg.render)?;
        let (_, dimg) = loss_l1_dssim(&art.image, &frame.target, None, cfg.schedule.loss.lambda)?;
        rasterize_backward(&cloud, cam, &cfg.render, &mut art, &dimg)?;
        acc.accumulate(&art, Policy::PixelAware)?;
    }
    let mut csv = String::from("index,views_seen,sum_coverage,score_baseline,score_pixel_aware\n");
    for i in 0..cloud.len() {
        csv.push_str(&format!(
            "{i},{},{},{:.6e},{:.6e}\n",
            acc.views_seen[i],
            acc.sum_m[i],
            score(&acc, i, Policy::Baseline),
            score(&acc, i, Policy::PixelAware),
        ));
    }
    match out {
        Some(p) => io::write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}
