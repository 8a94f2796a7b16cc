//! Rasterizer integration tests: tile-vs-reference equivalence, compositing
//! oracles, determinism, and the finite-difference gradient suites.

use nalgebra::{Vector3, Vector4};

use pgst_core::gradcheck::{suites, FD_TOL};
use pgst_core::gsmath::{logit, sigmoid, GaussianCloud, SH_C0};
use pgst_core::raster::{
    rasterize_backward, rasterize_forward, rasterize_reference, RenderConfig,
};
use pgst_core::synth;

#[test]
fn tile_matches_reference_on_random_scenes() {
    for seed in 0..30 {
        let (cloud, camera) = synth::random_scene(seed, 96, 64, 64);
        let cfg = RenderConfig::default();
        let tiled = rasterize_forward(&cloud, &camera, &cfg).unwrap();
        let refr = rasterize_reference(&cloud, &camera, &cfg, 4096).unwrap();
        assert!(
            tiled.image.max_abs_diff(&refr.image) <= 1e-5,
            "seed {seed}: max pixel diff {}",
            tiled.image.max_abs_diff(&refr.image)
        );
        for (i, (a, b)) in tiled
            .per_gaussian
            .iter()
            .zip(&refr.per_gaussian)
            .enumerate()
        {
            assert_eq!(a.coverage, b.coverage, "seed {seed} gaussian {i}");
            assert_eq!(a.valid, b.valid, "seed {seed} gaussian {i}");
        }
        assert_eq!(tiled.final_transmittance, refr.final_transmittance);
    }
}

/// One opaque splat centered exactly on a pixel: alpha clamps at 0.99, so
/// the pixel is 0.99·c + 0.01·bg.
#[test]
fn single_splat_center_pixel_oracle() {
    let camera = synth::frontal_camera(17, 17, 20.0);
    let mut cloud = GaussianCloud::with_capacity(0, 1);
    let c0 = Vector3::new(0.7, -0.4, 0.2);
    cloud.push(
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::repeat(-1.8),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(0.9999),
        &[c0],
    );
    let cfg = RenderConfig {
        background: [0.25, 0.5, 0.75],
        ..RenderConfig::default()
    };
    let art = rasterize_forward(&cloud, &camera, &cfg).unwrap();
    let center = art.image.pixels[8 * 17 + 8];
    for ch in 0..3 {
        let color = (0.5 + SH_C0 * c0[ch]).clamp(0.0, 1.0);
        let expect = 0.99 * color + 0.01 * cfg.background[ch];
        assert!(
            (center[ch] - expect).abs() < 5e-3,
            "channel {ch}: {} vs {expect}",
            center[ch]
        );
    }
    assert!((art.final_transmittance[8 * 17 + 8] - 0.01).abs() < 1e-3);
}

/// Two co-centered splats at different depths follow the front-to-back
/// recurrence C = a₁c₁ + (1−a₁)a₂c₂ + (1−a₁)(1−a₂)·bg exactly (the pixel
/// offset is zero, so aᵢ is the activated opacity).
#[test]
fn two_splat_recurrence_oracle() {
    let camera = synth::frontal_camera(17, 17, 20.0);
    let mut cloud = GaussianCloud::with_capacity(0, 2);
    let (o1, o2) = (0.6, 0.8);
    let (c1, c2) = (Vector3::new(0.9, 0.0, -0.5), Vector3::new(-0.5, 0.8, 0.3));
    // Pushed far-first: the rasterizer must depth-sort them itself.
    cloud.push(
        Vector3::new(0.0, 0.0, 3.0),
        Vector3::repeat(-2.0),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(o2),
        &[c2],
    );
    cloud.push(
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::repeat(-2.0),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(o1),
        &[c1],
    );
    let cfg = RenderConfig::default();
    let art = rasterize_forward(&cloud, &camera, &cfg).unwrap();
    let px = art.image.pixels[8 * 17 + 8];
    for ch in 0..3 {
        let col1 = (0.5 + SH_C0 * c1[ch]).clamp(0.0, 1.0);
        let col2 = (0.5 + SH_C0 * c2[ch]).clamp(0.0, 1.0);
        let expect = o1 * col1 + (1.0 - o1) * o2 * col2;
        assert!(
            (px[ch] - expect).abs() < 1e-12,
            "channel {ch}: {} vs {expect}",
            px[ch]
        );
    }
    let t = art.final_transmittance[8 * 17 + 8];
    assert!((t - (1.0 - o1) * (1.0 - o2)).abs() < 1e-12);
}

#[test]
fn off_image_gaussian_is_invalid_with_zero_coverage() {
    let camera = synth::frontal_camera(16, 16, 30.0);
    let mut cloud = GaussianCloud::with_capacity(0, 2);
    cloud.push(
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::repeat(-2.0),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(0.8),
        &[Vector3::new(0.5, 0.5, 0.5)],
    );
    // Far outside the padded image rectangle.
    cloud.push(
        Vector3::new(50.0, 0.0, 2.0),
        Vector3::repeat(-2.0),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(0.8),
        &[Vector3::new(0.5, 0.5, 0.5)],
    );
    let art = rasterize_forward(&cloud, &camera, &RenderConfig::default()).unwrap();
    assert!(art.per_gaussian[0].valid);
    assert!(!art.per_gaussian[1].valid);
    assert_eq!(art.per_gaussian[1].coverage, 0);
}

#[test]
fn fully_culled_scene_renders_pure_background() {
    let camera = synth::frontal_camera(16, 16, 30.0);
    let mut cloud = GaussianCloud::with_capacity(0, 1);
    cloud.push(
        Vector3::new(0.0, 0.0, -3.0),
        Vector3::repeat(-2.0),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        logit(0.8),
        &[Vector3::new(0.5, 0.5, 0.5)],
    );
    let cfg = RenderConfig {
        background: [0.1, 0.2, 0.3],
        ..RenderConfig::default()
    };
    let art = rasterize_forward(&cloud, &camera, &cfg).unwrap();
    assert!(art.image.pixels.iter().all(|p| *p == [0.1, 0.2, 0.3]));
    assert!(art.final_transmittance.iter().all(|&t| t == 1.0));
}

/// Appending a Gaussian never increases any pixel's final transmittance.
#[test]
fn transmittance_is_monotone_in_added_splats() {
    for seed in 100..110 {
        let (cloud, camera) = synth::random_scene(seed, 40, 32, 32);
        let cfg = RenderConfig::default();
        let mut partial = GaussianCloud::with_capacity(cloud.sh_degree, 0);
        let mut prev = vec![1.0; 32 * 32];
        for i in 0..cloud.len() {
            partial.push(
                cloud.positions[i],
                cloud.raw_scales[i],
                cloud.raw_rotations[i],
                cloud.raw_opacities[i],
                cloud.sh_coeffs(i),
            );
            let art = rasterize_forward(&partial, &camera, &cfg).unwrap();
            for (p, (&t_new, &t_old)) in
                art.final_transmittance.iter().zip(&prev).enumerate()
            {
                assert!(
                    t_new <= t_old + 1e-12,
                    "seed {seed} splat {i} pixel {p}: {t_new} > {t_old}"
                );
            }
            prev = art.final_transmittance;
        }
    }
}

/// The tile pass is bitwise deterministic regardless of thread count.
#[test]
fn forward_and_backward_deterministic_across_thread_counts() {
    let (cloud, camera) = synth::random_scene(42, 128, 64, 64);
    let cfg = RenderConfig::default();
    let weights = {
        let mut w = pgst_core::image::Image::new(64, 64);
        for (i, p) in w.pixels.iter_mut().enumerate() {
            *p = [
                sigmoid(i as f64 * 0.01) - 0.5,
                (i % 7) as f64 * 0.1 - 0.3,
                0.2,
            ];
        }
        w
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut art = rasterize_forward(&cloud, &camera, &cfg).unwrap();
            let grads = rasterize_backward(&cloud, &camera, &cfg, &mut art, &weights).unwrap();
            (art.image, art.structure_hash, grads.to_flat())
        })
    };
    let (img1, h1, g1) = run(1);
    let (img4, h4, g4) = run(4);
    assert_eq!(img1.pixels, img4.pixels);
    assert_eq!(h1, h4);
    assert_eq!(g1, g4);
}

#[test]
fn raster_gradient_suites_pass() {
    for rep in suites::raster_suite(20).unwrap() {
        println!("{rep}");
        assert!(rep.passes(FD_TOL), "{rep}");
    }
}

#[test]
fn encoder_and_mgf_gradient_suites_pass() {
    for rep in suites::encoder_suite(20)
        .into_iter()
        .chain(suites::mgf_mouth_suite(20))
        .chain(suites::mgf_face_suite(20))
        .chain(suites::loss_suite(20))
    {
        println!("{rep}");
        assert!(rep.passes(FD_TOL), "{rep}");
    }
}
