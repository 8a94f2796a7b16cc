//! Central finite-difference checking with discontinuity exclusion.
//!
//! A check compares an analytic gradient against `(f(x+h) − f(x−h)) / 2h`
//! coordinate by coordinate. Coordinates whose discrete evaluation structure
//! (as reported by a caller-supplied signature function) changes within
//! ±10h are sitting on a threshold and are excluded rather than compared.

/// Outcome of one finite-difference suite.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max_rel_err={:.3e} checked={} excluded={}",
            self.label, self.max_rel_err, self.checked, self.excluded
        )
    }
}

/// Step size used across the gradient suites.
pub const FD_STEP: f64 = 1e-4;
/// Relative-error tolerance used across the gradient suites.
pub const FD_TOL: f64 = 1e-3;
/// Multiple of the step within which a structure flip marks a discontinuity.
pub const FD_EXCLUSION_FACTOR: f64 = 10.0;

/// Relative error with an absolute floor so near-zero gradient pairs do not
/// blow up the ratio.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Check `analytic` against central differences of `f` at `x`.
///
/// `structure(x)` must hash the discrete evaluation structure of `f`; any
/// coordinate where the hash differs at x ± 10h from the base point is
/// excluded. Pass `|_| 0` for globally smooth functions.
pub fn check_gradient(
    label: &str,
    f: &dyn Fn(&[f64]) -> f64,
    structure: &dyn Fn(&[f64]) -> u64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len());
    let base_sig = structure(x);
    let mut probe = x.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut excluded = 0;
    for k in 0..x.len() {
        let mut flipped = false;
        for delta in [
            FD_EXCLUSION_FACTOR * step,
            -FD_EXCLUSION_FACTOR * step,
            step,
            -step,
        ] {
            probe[k] = x[k] + delta;
            if structure(&probe) != base_sig {
                flipped = true;
                break;
            }
        }
        if flipped {
            probe[k] = x[k];
            excluded += 1;
            continue;
        }
        probe[k] = x[k] + step;
        let fp = f(&probe);
        probe[k] = x[k] - step;
        let fm = f(&probe);
        probe[k] = x[k];
        let fd = (fp - fm) / (2.0 * step);
        max_rel = max_rel.max(rel_err(fd, analytic[k], floor));
        checked += 1;
    }
    GradCheckReport {
        label: label.to_string(),
        max_rel_err: max_rel,
        checked,
        excluded,
    }
}

/// Randomized finite-difference suites over whole subsystems, shared by the
/// integration tests and the `gradcheck` command.
pub mod suites {
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_gradient, GradCheckReport, FD_STEP};
    use crate::deform::{EncoderConfig, FaceCache, FaceDelta, MgfConfig, MgfFace, MgfMouth, MouthCache, TriPlaneHashEncoder};
    use crate::image::Image;
    use crate::raster::{rasterize_backward, rasterize_forward, RenderConfig};
    use crate::train::loss::loss_l1_dssim;
    use crate::{synth, Result};

    const FLOOR: f64 = 1e-6;

    fn fold(into: &mut GradCheckReport, r: &GradCheckReport) {
        into.max_rel_err = into.max_rel_err.max(r.max_rel_err);
        into.checked += r.checked;
        into.excluded += r.excluded;
    }

    fn blank(label: &str) -> GradCheckReport {
        GradCheckReport {
            label: label.to_string(),
            max_rel_err: 0.0,
            checked: 0,
            excluded: 0,
        }
    }

    /// Check a subset of a flat parameter vector against FD of `f_full`.
    #[allow(clippy::too_many_arguments)]
    fn check_subset(
        label: &str,
        f_full: &dyn Fn(&[f64]) -> f64,
        structure_full: &dyn Fn(&[f64]) -> u64,
        base: &[f64],
        analytic: &[f64],
        indices: &[usize],
        report: &mut GradCheckReport,
    ) {
        let sub_x: Vec<f64> = indices.iter().map(|&i| base[i]).collect();
        let sub_g: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
        let scatter = |xs: &[f64]| {
            let mut full = base.to_vec();
            for (k, &i) in indices.iter().enumerate() {
                full[i] = xs[k];
            }
            full
        };
        let f = |xs: &[f64]| f_full(&scatter(xs));
        let structure = |xs: &[f64]| structure_full(&scatter(xs));
        let r = check_gradient(label, &f, &structure, &sub_x, &sub_g, FD_STEP, FLOOR);
        fold(report, &r);
    }

    fn random_weight_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
        let mut img = Image::new(w, h);
        for p in &mut img.pixels {
            *p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
        }
        img
    }

    fn dot(img: &Image, w: &Image) -> f64 {
        img.pixels
            .iter()
            .zip(&w.pixels)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
            .sum()
    }

    /// One report per rasterizer parameter class, aggregated over
    /// `instances` random scenes. Discontinuity exclusion uses the forward
    /// structure hash.
    pub fn raster_suite(instances: usize) -> Result<Vec<GradCheckReport>> {
        let labels = [
            "raster/position",
            "raster/raw_scale",
            "raster/raw_rotation",
            "raster/raw_opacity",
            "raster/color",
        ];
        let mut reports: Vec<GradCheckReport> = labels.iter().map(|l| blank(l)).collect();
        let cfg = RenderConfig::default();
        for seed in 0..instances as u64 {
            let (cloud, camera) = synth::gradcheck_scene(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ seed);
            let weights = random_weight_image(camera.width, camera.height, &mut rng);
            let base = cloud.to_flat();
            let f_full = |x: &[f64]| {
                let c = cloud.from_flat(x);
                let art = rasterize_forward(&c, &camera, &cfg).unwrap();
                dot(&art.image, &weights)
            };
            let structure_full = |x: &[f64]| {
                let c = cloud.from_flat(x);
                rasterize_forward(&c, &camera, &cfg).unwrap().structure_hash
            };
            let mut artifacts = rasterize_forward(&cloud, &camera, &cfg)?;
            let analytic =
                rasterize_backward(&cloud, &camera, &cfg, &mut artifacts, &weights)?.to_flat();

            let n = cloud.len();
            let b = cloud.basis();
            let stride = 11 + 3 * b;
            let class_indices: [Vec<usize>; 5] = [
                (0..n).flat_map(|i| (0..3).map(move |k| i * stride + k)).collect(),
                (0..n).flat_map(|i| (3..6).map(move |k| i * stride + k)).collect(),
                (0..n).flat_map(|i| (6..10).map(move |k| i * stride + k)).collect(),
                (0..n).map(|i| i * stride + 10).collect(),
                (0..n)
                    .flat_map(|i| (11..stride).map(move |k| i * stride + k))
                    .collect(),
            ];
            for (ci, idx) in class_indices.iter().enumerate() {
                check_subset(
                    labels[ci],
                    &f_full,
                    &structure_full,
                    &base,
                    &analytic,
                    idx,
                    &mut reports[ci],
                );
            }
        }
        Ok(reports)
    }

    /// Encoder suite: position gradient and (touched) table-entry gradients
    /// of a random projection of the feature vector.
    pub fn encoder_suite(instances: usize) -> Vec<GradCheckReport> {
        let mut pos_rep = blank("encoder/position");
        let mut tab_rep = blank("encoder/table");
        let cfg = EncoderConfig {
            levels: 2,
            features: 2,
            table_size: 128,
            base_resolution: 4,
            max_resolution: 8,
        };
        for seed in 0..instances as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xe4c0de ^ seed);
            let enc = TriPlaneHashEncoder::new(
                &cfg,
                Vector3::new(-1.0, -1.0, -1.0),
                Vector3::new(1.0, 1.0, 1.0),
                &mut rng,
            );
            let pos = Vector3::new(
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            );
            let w: Vec<f64> = (0..enc.output_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut table_grads = vec![0.0; enc.tables.len()];
            let mut d_pos = Vector3::zeros();
            enc.encode_backward(&pos, &w, &mut table_grads, &mut d_pos);

            let f_pos = |x: &[f64]| {
                let p = Vector3::new(x[0], x[1], x[2]);
                enc.encode(&p).iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let sig_pos = |x: &[f64]| enc.cell_signature(&Vector3::new(x[0], x[1], x[2]));
            let r = check_gradient(
                "encoder/position",
                &f_pos,
                &sig_pos,
                pos.as_slice(),
                d_pos.as_slice(),
                FD_STEP,
                FLOOR,
            );
            fold(&mut pos_rep, &r);

            // Tables: the encoding is linear in them; check every touched
            // entry plus a sample of untouched ones.
            let mut idx: Vec<usize> = table_grads
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != 0.0)
                .map(|(i, _)| i)
                .collect();
            for _ in 0..16 {
                idx.push(rng.gen_range(0..enc.tables.len()));
            }
            idx.sort_unstable();
            idx.dedup();
            let f_tab_full = |t: &[f64]| {
                let mut e = enc.clone();
                e.tables.copy_from_slice(t);
                e.encode(&pos).iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            check_subset(
                "encoder/table",
                &f_tab_full,
                &|_| 0,
                &enc.tables,
                &table_grads,
                &idx,
                &mut tab_rep,
            );
        }
        vec![pos_rep, tab_rep]
    }

    fn small_mgf() -> MgfConfig {
        MgfConfig {
            proj_dim: 4,
            hidden: 8,
            hidden_layers: 1,
        }
    }

    /// Mouth-branch suite: parameter and input gradients of a random output
    /// projection. The chain is smooth, so no exclusion signature is needed.
    pub fn mgf_mouth_suite(instances: usize) -> Vec<GradCheckReport> {
        let mut param_rep = blank("mgf_mouth/params");
        let mut input_rep = blank("mgf_mouth/inputs");
        for seed in 0..instances as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x300f ^ seed);
            let (ds, da) = (6, 3);
            let model = MgfMouth::new(&small_mgf(), ds, da, false, &mut rng);
            let f_s: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f_a: Vec<f64> = (0..da).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let mut cache = MouthCache::default();
            model.forward(&f_s, &f_a, &mut cache);
            let mut grads = model.zeros_like();
            let (d_fs, d_fa) = model.backward(&f_s, &f_a, &cache, &w, &mut grads);

            let mut params = Vec::new();
            model.collect_params(&mut params);
            let mut analytic = Vec::new();
            grads.collect_params(&mut analytic);
            let f_params = |p: &[f64]| {
                let mut m = model.clone();
                let mut src = p;
                m.assign_params(&mut src);
                let mut c = MouthCache::default();
                m.forward(&f_s, &f_a, &mut c).dot(&w)
            };
            let r = check_gradient("mgf_mouth/params", &f_params, &|_| 0, &params, &analytic, FD_STEP, FLOOR);
            fold(&mut param_rep, &r);

            let inputs: Vec<f64> = f_s.iter().chain(&f_a).copied().collect();
            let d_inputs: Vec<f64> = d_fs.iter().chain(&d_fa).copied().collect();
            let f_inputs = |x: &[f64]| {
                let mut c = MouthCache::default();
                model.forward(&x[..ds], &x[ds..], &mut c).dot(&w)
            };
            let r = check_gradient("mgf_mouth/inputs", &f_inputs, &|_| 0, &inputs, &d_inputs, FD_STEP, FLOOR);
            fold(&mut input_rep, &r);
        }
        vec![param_rep, input_rep]
    }

    /// Face-branch suite, analogous to the mouth suite but over the 10-dim
    /// (Δμ, Δs, Δq) output.
    pub fn mgf_face_suite(instances: usize) -> Vec<GradCheckReport> {
        let mut param_rep = blank("mgf_face/params");
        let mut input_rep = blank("mgf_face/inputs");
        for seed in 0..instances as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xface ^ seed);
            let (ds, da, de) = (6, 3, 2);
            let model = MgfFace::new(&small_mgf(), ds, da, de, false, &mut rng);
            let f_s: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f_a: Vec<f64> = (0..da).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f_e: Vec<f64> = (0..de).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let proj = |d: &FaceDelta| {
                d.d_position[0] * w[0]
                    + d.d_position[1] * w[1]
                    + d.d_position[2] * w[2]
                    + d.d_raw_scale[0] * w[3]
                    + d.d_raw_scale[1] * w[4]
                    + d.d_raw_scale[2] * w[5]
                    + d.d_raw_rotation[0] * w[6]
                    + d.d_raw_rotation[1] * w[7]
                    + d.d_raw_rotation[2] * w[8]
                    + d.d_raw_rotation[3] * w[9]
            };
            let d_out = FaceDelta {
                d_position: Vector3::new(w[0], w[1], w[2]),
                d_raw_scale: Vector3::new(w[3], w[4], w[5]),
                d_raw_rotation: nalgebra::Vector4::new(w[6], w[7], w[8], w[9]),
            };
            let mut cache = FaceCache::default();
            model.forward(&f_s, &f_a, &f_e, &mut cache);
            let mut grads = model.zeros_like();
            let (d_fs, d_fa, d_fe) = model.backward(&f_a, &f_e, &cache, &d_out, &mut grads);

            let mut params = Vec::new();
            model.collect_params(&mut params);
            let mut analytic = Vec::new();
            grads.collect_params(&mut analytic);
            let f_params = |p: &[f64]| {
                let mut m = model.clone();
                let mut src = p;
                m.assign_params(&mut src);
                let mut c = FaceCache::default();
                proj(&m.forward(&f_s, &f_a, &f_e, &mut c))
            };
            let r = check_gradient("mgf_face/params", &f_params, &|_| 0, &params, &analytic, FD_STEP, FLOOR);
            fold(&mut param_rep, &r);

            let inputs: Vec<f64> = f_s.iter().chain(&f_a).chain(&f_e).copied().collect();
            let d_inputs: Vec<f64> = d_fs.iter().chain(&d_fa).chain(&d_fe).copied().collect();
            let f_inputs = |x: &[f64]| {
                let mut c = FaceCache::default();
                proj(&model.forward(&x[..ds], &x[ds..ds + da], &x[ds + da..], &mut c))
            };
            let r = check_gradient("mgf_face/inputs", &f_inputs, &|_| 0, &inputs, &d_inputs, FD_STEP, FLOOR);
            fold(&mut input_rep, &r);
        }
        vec![param_rep, input_rep]
    }

    /// Loss suites over random 8×8 image pairs. L1's sign pattern serves as
    /// the exclusion signature.
    pub fn loss_suite(instances: usize) -> Vec<GradCheckReport> {
        let mut masked_rep = blank("loss/l1_dssim_masked");
        let mut plain_rep = blank("loss/l1_dssim");
        for seed in 0..instances as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x105e ^ seed);
            let pred = random_weight_image(8, 8, &mut rng);
            let pred = Image {
                pixels: pred.pixels.iter().map(|p| p.map(|v| 0.5 + 0.5 * v)).collect(),
                ..pred
            };
            let target = random_weight_image(8, 8, &mut rng);
            let target = Image {
                pixels: target.pixels.iter().map(|p| p.map(|v| 0.5 + 0.5 * v)).collect(),
                ..target
            };
            let mask: Vec<f64> = (0..64).map(|_| f64::from(rng.gen_bool(0.75))).collect();
            for (use_mask, rep) in [(true, &mut masked_rep), (false, &mut plain_rep)] {
                let m = if use_mask { Some(mask.as_slice()) } else { None };
                let (_, grad) = loss_l1_dssim(&pred, &target, m, 0.2).unwrap();
                let flat: Vec<f64> = pred.pixels.iter().flatten().copied().collect();
                let analytic: Vec<f64> = grad.pixels.iter().flatten().copied().collect();
                let rebuild = |x: &[f64]| {
                    let mut img = pred.clone();
                    for (p, chunk) in img.pixels.iter_mut().zip(x.chunks_exact(3)) {
                        p.copy_from_slice(chunk);
                    }
                    img
                };
                let f = |x: &[f64]| loss_l1_dssim(&rebuild(x), &target, m, 0.2).unwrap().0;
                let structure = |x: &[f64]| {
                    let img = rebuild(x);
                    let mut h = 0xcbf29ce484222325u64;
                    for (pa, pb) in img.pixels.iter().zip(&target.pixels) {
                        for c in 0..3 {
                            h ^= u64::from(pa[c] - pb[c] > 0.0);
                            h = h.wrapping_mul(0x100000001b3);
                        }
                    }
                    h
                };
                let r = check_gradient(&rep.label.clone(), &f, &structure, &flat, &analytic, FD_STEP, FLOOR);
                fold(rep, &r);
            }
        }
        vec![masked_rep, plain_rep]
    }

    /// Every suite at the acceptance instance count.
    pub fn run_all(instances: usize) -> Result<Vec<GradCheckReport>> {
        let mut all = raster_suite(instances)?;
        all.extend(encoder_suite(instances));
        all.extend(mgf_mouth_suite(instances));
        all.extend(mgf_face_suite(instances));
        all.extend(loss_suite(instances));
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = vec![0.3, -1.2, 2.0];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let rep = check_gradient("quad", &f, &|_| 0, &x, &g, FD_STEP, 1e-8);
        assert!(rep.passes(FD_TOL), "{rep}");
        assert_eq!(rep.excluded, 0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let f = |x: &[f64]| x[0] * x[0];
        let rep = check_gradient("bad", &f, &|_| 0, &[1.0], &[1.7], FD_STEP, 1e-8);
        assert!(!rep.passes(FD_TOL));
    }

    #[test]
    fn structure_flip_is_excluded() {
        // A step function: structure hash flips at the threshold, so the
        // coordinate near it is skipped instead of producing a bogus error.
        let f = |x: &[f64]| if x[0] > 1.0 { 1.0 } else { 0.0 };
        let sig = |x: &[f64]| (x[0] > 1.0) as u64;
        let rep = check_gradient("step", &f, &sig, &[1.0 + 2e-4], &[0.0], FD_STEP, 1e-8);
        assert_eq!(rep.excluded, 1);
        assert_eq!(rep.checked, 0);
    }
}
