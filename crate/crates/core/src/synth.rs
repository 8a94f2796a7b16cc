//! Synthetic scenes and datasets: random clouds for fuzzing, a hidden
//! ground-truth self-reconstruction suite, a thin-stripe scene where pixel
//! coverage and gradient magnitude decorrelate across views, and an
//! audio-driven deformation rig with a known Δμ = A·sin(audio) law.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::FrameFeatures;
use crate::densctl::Policy;
use crate::gsmath::{logit, Camera, GaussianCloud};
use crate::raster::{rasterize_forward, RenderConfig};
use crate::train::{Dataset, Frame, TrainSchedule};
use crate::Result;

/// Right-handed look-at camera: +z forward, +x right, +y down the image.
pub fn lookat_camera(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    width: usize,
    height: usize,
    focal: f64,
) -> Camera {
    let f = (target - eye).normalize();
    let up = if f.x.abs() < 0.9 {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let r = up.cross(&f).normalize();
    let d = f.cross(&r);
    let rotation = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
    Camera {
        focal: (focal, focal),
        principal: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        rotation,
        translation: -rotation * eye,
        width,
        height,
        near: 0.1,
    }
}

/// `count` cameras on a circle of radius `radius` at height `y`, all looking
/// at the origin.
pub fn orbit_cameras(
    count: usize,
    radius: f64,
    y: f64,
    width: usize,
    height: usize,
    focal: f64,
) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            lookat_camera(
                Vector3::new(radius * t.cos(), y, radius * t.sin()),
                Vector3::zeros(),
                width,
                height,
                focal,
            )
        })
        .collect()
}

/// Identity-pose camera at the origin looking down +z.
pub fn frontal_camera(width: usize, height: usize, focal: f64) -> Camera {
    Camera {
        focal: (focal, focal),
        principal: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width,
        height,
        near: 0.1,
    }
}

/// Random cloud in the frustum of [`frontal_camera`], with a sprinkling of
/// off-screen and behind-camera outliers to exercise culling. Parameters are
/// kept safely away from activation extremes.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, sh_degree: usize, camera: &Camera) -> GaussianCloud {
    let mut cloud = GaussianCloud::with_capacity(sh_degree, n);
    let basis = if sh_degree == 0 { 1 } else { 4 };
    for i in 0..n {
        let z = rng.gen_range(1.5..5.0);
        let half_x = 0.6 * z * camera.width as f64 / (2.0 * camera.focal.0);
        let half_y = 0.6 * z * camera.height as f64 / (2.0 * camera.focal.1);
        let pos_cam = match i % 10 {
            // Off-screen (beyond the frustum) and behind-camera outliers.
            8 => Vector3::new(4.0 * half_x, 0.0, z),
            9 => Vector3::new(0.0, 0.0, -z),
            _ => Vector3::new(
                rng.gen_range(-half_x..half_x),
                rng.gen_range(-half_y..half_y),
                z,
            ),
        };
        let pos = camera.rotation.transpose() * (pos_cam - camera.translation);
        let raw_scale = Vector3::new(
            rng.gen_range(-3.5..-1.5),
            rng.gen_range(-3.5..-1.5),
            rng.gen_range(-3.5..-1.5),
        );
        let raw_rot = Vector4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let raw_rot = if raw_rot.norm() < 0.1 {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        } else {
            raw_rot
        };
        let raw_opacity = logit(rng.gen_range(0.2..0.9));
        let mut colors = Vec::with_capacity(basis);
        // DC kept inside (0,1) after the 0.5 offset; rest terms small.
        colors.push(Vector3::new(
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-1.2..1.2),
        ));
        for _ in 1..basis {
            colors.push(Vector3::new(
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
            ));
        }
        cloud.push(pos, raw_scale, raw_rot, raw_opacity, &colors);
    }
    cloud
}

/// A random frontal scene for rasterizer fuzzing.
pub fn random_scene(seed: u64, n: usize, width: usize, height: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = frontal_camera(width, height, rng.gen_range(40.0..90.0));
    let sh_degree = usize::from(seed % 2 == 1);
    (random_cloud(&mut rng, n, sh_degree, &camera), camera)
}

/// Small smooth-friendly scene for finite-difference suites: few Gaussians,
/// mid-range opacities, colors far from the [0,1] clamp.
pub fn gradcheck_scene(seed: u64) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = frontal_camera(24, 24, 24.0);
    let sh_degree = usize::from(seed % 2 == 1);
    let basis = if sh_degree == 0 { 1 } else { 4 };
    let mut cloud = GaussianCloud::with_capacity(sh_degree, 4);
    for _ in 0..4 {
        let z = rng.gen_range(2.0..4.0);
        let pos = Vector3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), z);
        let raw_scale = Vector3::new(
            rng.gen_range(-2.2..-1.2),
            rng.gen_range(-2.2..-1.2),
            rng.gen_range(-2.2..-1.2),
        );
        let raw_rot = Vector4::new(
            rng.gen_range(0.5..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let raw_opacity = logit(rng.gen_range(0.3..0.7));
        let mut colors = vec![Vector3::new(
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
        )];
        for _ in 1..basis {
            colors.push(Vector3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ));
        }
        cloud.push(pos, raw_scale, raw_rot, raw_opacity, &colors);
    }
    (cloud, camera)
}

/// Render targets for each camera (one frame per camera, no masks).
pub fn render_dataset(
    cloud: &GaussianCloud,
    cameras: Vec<Camera>,
    cfg: &RenderConfig,
) -> Result<Dataset> {
    let mut frames = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let art = rasterize_forward(cloud, cam, cfg)?;
        frames.push(Frame {
            camera: i,
            target: art.image,
            face_mask: None,
            mouth_mask: None,
            features: None,
        });
    }
    Ok(Dataset { cameras, frames })
}

/// Self-reconstruction suite: a hidden 8-Gaussian ground truth rendered from
/// 4 orbit views at 64×64, plus a random initialization.
pub struct SelfReconstruction {
    pub ground_truth: GaussianCloud,
    pub init: GaussianCloud,
    pub dataset: Dataset,
    pub render_cfg: RenderConfig,
}

pub fn self_reconstruction(seed: u64) -> Result<SelfReconstruction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let mut gt = GaussianCloud::with_capacity(0, 8);
    for _ in 0..8 {
        let pos = Vector3::new(
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let raw_scale = Vector3::new(
            rng.gen_range(-2.0..-1.2),
            rng.gen_range(-2.0..-1.2),
            rng.gen_range(-2.0..-1.2),
        );
        let raw_rot = Vector4::new(
            rng.gen_range(0.5..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        let raw_opacity = logit(rng.gen_range(0.6..0.9));
        let colors = [Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )];
        gt.push(pos, raw_scale, raw_rot, raw_opacity, &colors);
    }
    let render_cfg = RenderConfig::default();
    let cameras = orbit_cameras(4, 4.0, 0.8, 64, 64, 70.0);
    let dataset = render_dataset(&gt, cameras, &render_cfg)?;

    let mut init = GaussianCloud::with_capacity(0, 24);
    for _ in 0..24 {
        let pos = Vector3::new(
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        );
        let colors = [Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        )];
        init.push(
            pos,
            Vector3::repeat(-1.8),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.5),
            &colors,
        );
    }
    Ok(SelfReconstruction {
        ground_truth: gt,
        init,
        dataset,
        render_cfg,
    })
}

/// Thin-stripe ablation scene. The ground truth is a flat slab plus a thin
/// stripe of small bright Gaussians along x at y = 0. Views mix one zoomed
/// close-up (where the stripe covers many pixels and carries large gradients)
/// with far views (tiny coverage), so per-pixel weighting changes which
/// Gaussians densify first.
pub struct StripeScene {
    pub ground_truth: GaussianCloud,
    pub init: GaussianCloud,
    pub dataset: Dataset,
    pub render_cfg: RenderConfig,
    /// Index of the evaluation camera inside the dataset.
    pub eval_camera: usize,
    /// {0,1} stripe mask in the evaluation view.
    pub stripe_mask: Vec<f64>,
}

pub fn thin_stripe(seed: u64) -> Result<StripeScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(3));
    let mut gt = GaussianCloud::with_capacity(0, 0);
    // Background slab: broad dim Gaussians behind the stripe plane.
    for i in 0..6 {
        let x = -0.9 + 0.36 * i as f64;
        gt.push(
            Vector3::new(x, 0.0, 0.15),
            Vector3::new(-0.9, -0.9, -3.0),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.85),
            &[Vector3::new(-0.6, -0.5, -0.4)],
        );
    }
    // The stripe: small Gaussians along y = 0 with alternating bright colors.
    let stripe_n = 12;
    for i in 0..stripe_n {
        let x = -0.85 + 1.7 * i as f64 / (stripe_n - 1) as f64;
        let bright = if i % 2 == 0 {
            Vector3::new(1.4, 1.2, -0.8)
        } else {
            Vector3::new(-0.8, 1.0, 1.4)
        };
        gt.push(
            Vector3::new(x, 0.0, 0.0),
            Vector3::new(-3.4, -4.2, -4.2),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.92),
            &[bright],
        );
    }

    let render_cfg = RenderConfig::default();
    // One close-up view and six distant views of the same plane.
    let mut cameras = vec![lookat_camera(
        Vector3::new(0.0, 0.0, -1.1),
        Vector3::zeros(),
        64,
        64,
        64.0,
    )];
    for i in 0..6 {
        let t = -1.0 + 0.4 * i as f64;
        cameras.push(lookat_camera(
            Vector3::new(t, 0.4 + 0.1 * i as f64, -3.8),
            Vector3::zeros(),
            64,
            64,
            48.0,
        ));
    }
    let eval_camera = 0;
    let dataset = render_dataset(&gt, cameras, &render_cfg)?;

    // Stripe mask: pixels of the eval view where the stripe-only render
    // differs from background.
    let mut stripe_only = GaussianCloud::with_capacity(0, stripe_n);
    for i in 6..6 + stripe_n {
        stripe_only.push(
            gt.positions[i],
            gt.raw_scales[i],
            gt.raw_rotations[i],
            gt.raw_opacities[i],
            gt.sh_coeffs(i),
        );
    }
    let art = rasterize_forward(&stripe_only, &dataset.cameras[eval_camera], &render_cfg)?;
    let stripe_mask: Vec<f64> = art
        .final_transmittance
        .iter()
        .map(|&t| f64::from(t < 0.98))
        .collect();

    // Coarse initialization: slab roughly in place, stripe underresolved.
    let mut init = GaussianCloud::with_capacity(0, 0);
    for i in 0..6 {
        let x = -0.9 + 0.36 * i as f64;
        init.push(
            Vector3::new(x + rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.15),
            Vector3::new(-1.0, -1.0, -3.0),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.7),
            &[Vector3::new(-0.5, -0.45, -0.4)],
        );
    }
    for i in 0..4 {
        let x = -0.75 + 0.5 * i as f64;
        init.push(
            Vector3::new(x, rng.gen_range(-0.02..0.02), 0.0),
            Vector3::new(-2.2, -3.0, -3.6),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.6),
            &[Vector3::new(0.3, 0.5, 0.3)],
        );
    }
    Ok(StripeScene {
        ground_truth: gt,
        init,
        dataset,
        render_cfg,
        eval_camera,
        stripe_mask,
    })
}

/// Training schedule for the thin-stripe ablation. The positional threshold
/// sits between the stripe scores assigned by the two densification policies
/// on the coarse initialization (unweighted mean ≈ 4.5e−3, coverage-weighted
/// ≈ 7e−3), so only the coverage-weighted policy refines the stripe.
pub fn stripe_schedule(policy: Policy, seed: u64) -> TrainSchedule {
    let mut schedule = TrainSchedule {
        static_iters: 2500,
        seed,
        ..TrainSchedule::default()
    };
    schedule.densify.policy = policy;
    schedule.densify.tau_pos = 5.5e-3;
    schedule.densify.max_points = 48;
    schedule.densify.start_iter = 400;
    schedule.densify.interval = 200;
    schedule.densify.stop_iter = 1400;
    schedule
}

/// Audio-driven rig: Δμ = amplitude·sin(audio)·axis on a marked subset.
pub struct DeformRig {
    pub base: GaussianCloud,
    pub marked: Vec<bool>,
    pub amplitude: f64,
    pub axis: Vector3<f64>,
    pub dataset: Dataset,
    pub render_cfg: RenderConfig,
    /// Per-frame audio scalar driving the ground truth.
    pub audio_scalars: Vec<f64>,
}

impl DeformRig {
    /// Ground-truth position offset of point `i` for audio scalar `a`.
    pub fn gt_offset(&self, i: usize, a: f64) -> Vector3<f64> {
        if self.marked[i] {
            self.axis * (self.amplitude * a.sin())
        } else {
            Vector3::zeros()
        }
    }

    /// Ground-truth deformed cloud for one audio scalar.
    pub fn gt_deformed(&self, a: f64) -> GaussianCloud {
        let mut c = self.base.clone();
        for i in 0..c.len() {
            c.positions[i] += self.gt_offset(i, a);
        }
        c
    }
}

/// Feature layout used by the rig: audio = [a, 1], expression = [0, 0].
pub fn rig_features(a: f64) -> FrameFeatures {
    FrameFeatures {
        audio: vec![a, 1.0],
        expression: vec![0.0, 0.0],
    }
}

pub fn deform_rig(seed: u64, frames_n: usize) -> Result<DeformRig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xda942042e4dd58b5).wrapping_add(7));
    let mut base = GaussianCloud::with_capacity(0, 12);
    let mut marked = Vec::new();
    for i in 0..12 {
        let is_marked = i < 5;
        let pos = if is_marked {
            Vector3::new(-0.4 + 0.2 * i as f64, rng.gen_range(-0.05..0.05), 0.0)
        } else {
            Vector3::new(
                rng.gen_range(-0.7..0.7),
                rng.gen_range(0.5..0.85),
                rng.gen_range(-0.2..0.2),
            )
        };
        // Saturated, pairwise-distinct colors so neighboring blobs cannot be
        // confused by the photometric loss.
        let palette = [
            Vector3::new(1.6, -1.2, -1.2),
            Vector3::new(-1.2, 1.6, -1.2),
            Vector3::new(-1.2, -1.2, 1.6),
            Vector3::new(1.6, 1.6, -1.2),
            Vector3::new(1.6, -1.2, 1.6),
            Vector3::new(-1.2, 1.6, 1.6),
        ];
        let colors = [palette[i % palette.len()] * if i < 6 { 1.0 } else { 0.55 }];
        base.push(
            pos,
            Vector3::repeat(-2.3),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            logit(0.9),
            &colors,
        );
        marked.push(is_marked);
    }
    let rig_axis = Vector3::new(0.0, -1.0, 0.0);
    let amplitude = 0.35;
    let render_cfg = RenderConfig::default();
    let cameras = vec![
        lookat_camera(Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), 64, 64, 64.0),
        lookat_camera(Vector3::new(2.0, 0.4, -2.2), Vector3::zeros(), 64, 64, 64.0),
        lookat_camera(Vector3::new(-2.0, 0.4, -2.2), Vector3::zeros(), 64, 64, 64.0),
        lookat_camera(Vector3::new(0.0, 2.2, -2.0), Vector3::zeros(), 64, 64, 64.0),
    ];

    let mut rig = DeformRig {
        base,
        marked,
        amplitude,
        axis: rig_axis,
        dataset: Dataset {
            cameras,
            frames: Vec::new(),
        },
        render_cfg,
        audio_scalars: Vec::new(),
    };
    for t in 0..frames_n {
        let a = -1.2 + 2.4 * t as f64 / (frames_n - 1).max(1) as f64;
        rig.audio_scalars.push(a);
        let deformed = rig.gt_deformed(a);
        for cam_idx in 0..rig.dataset.cameras.len() {
            let art = rasterize_forward(&deformed, &rig.dataset.cameras[cam_idx], &rig.render_cfg)?;
            rig.dataset.frames.push(Frame {
                camera: cam_idx,
                target: art.image,
                face_mask: None,
                mouth_mask: None,
                features: Some(rig_features(a)),
            });
        }
    }
    Ok(rig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookat_rotation_is_special_orthogonal() {
        for eye in [
            Vector3::new(3.0, 1.0, 0.0),
            Vector3::new(-2.0, 0.5, 4.0),
            Vector3::new(0.97, 0.0, 0.01),
        ] {
            let cam = lookat_camera(eye, Vector3::zeros(), 32, 32, 30.0);
            cam.validate().unwrap();
            assert!((cam.center() - eye).norm() < 1e-12);
            // The target projects onto the optical axis at positive depth.
            let t = cam.to_camera(&Vector3::zeros());
            assert!(t.z > 0.0 && t.x.abs() < 1e-12 && t.y.abs() < 1e-12);
        }
    }

    #[test]
    fn random_scene_is_valid_and_partially_visible() {
        let (cloud, camera) = random_scene(11, 64, 48, 48);
        cloud.validate().unwrap();
        camera.validate().unwrap();
        let art = rasterize_forward(&cloud, &camera, &RenderConfig::default()).unwrap();
        let visible = art.per_gaussian.iter().filter(|g| g.valid).count();
        let culled = art.per_gaussian.iter().filter(|g| !g.valid).count();
        assert!(visible > 0 && culled > 0);
    }

    #[test]
    fn self_reconstruction_targets_are_nontrivial() {
        let suite = self_reconstruction(0).unwrap();
        suite.dataset.validate().unwrap();
        assert_eq!(suite.dataset.frames.len(), 4);
        for f in &suite.dataset.frames {
            let mean: f64 = f.target.pixels.iter().flatten().sum::<f64>()
                / (f.target.pixels.len() * 3) as f64;
            // Not all-background and not saturated.
            assert!(mean > 0.01 && mean < 0.99);
        }
    }

    #[test]
    fn stripe_mask_is_thin_but_nonempty() {
        let scene = thin_stripe(0).unwrap();
        let count = scene.stripe_mask.iter().sum::<f64>() as usize;
        assert!(count > 20, "stripe invisible: {count}");
        assert!(count < 64 * 64 / 4, "stripe covers too much: {count}");
    }

    #[test]
    fn rig_targets_move_with_audio() {
        let rig = deform_rig(0, 5).unwrap();
        assert_eq!(rig.dataset.frames.len(), 20);
        let first = &rig.dataset.frames[0].target;
        let last = &rig.dataset.frames[16].target;
        assert!(first.max_abs_diff(last) > 0.05);
        // Unmarked points never move.
        let d = rig.gt_deformed(1.0);
        for i in 0..rig.base.len() {
            if !rig.marked[i] {
                assert_eq!(d.positions[i], rig.base.positions[i]);
            }
        }
    }
}
