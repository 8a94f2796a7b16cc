//! Gaussian primitive parameterization, covariance assembly and camera
//! projection.
//!
//! Parameters are stored unconstrained and mapped by activations:
//! scale in log space (`exp`), opacity in logit space (`sigmoid`), rotation
//! as an unnormalized quaternion (normalized on use). The world covariance is
//!
//!   Σ = R diag(exp(s))² Rᵀ
//!
//! and the screen-space covariance follows the EWA local affine approximation
//!
//!   Σ₂d = J W Σ Wᵀ Jᵀ + λ_lp·I
//!
//! with `W` the world→camera rotation and `J` the perspective Jacobian
//! evaluated at the Gaussian center. All forward maps here have hand-derived
//! backward companions validated by finite differences.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::{Error, Result};

/// Low-pass regularization added to the 2D covariance diagonal (px²).
pub const LOW_PASS: f64 = 0.3;

/// Ratio multiplier bounding the EWA Jacobian for off-frustum centers.
pub const FRUSTUM_CLAMP: f64 = 1.3;

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Degree-1 spherical harmonic basis constant.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Parameter arrays for N Gaussians.
///
/// `colors` holds spherical-harmonic coefficients, `basis()` triples per
/// Gaussian (degree 0 → 1, degree 1 → 4), laid out Gaussian-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    pub raw_scales: Vec<Vector3<f64>>,
    pub raw_rotations: Vec<Vector4<f64>>,
    pub raw_opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub sh_degree: usize,
}

impl GaussianCloud {
    pub fn with_capacity(sh_degree: usize, n: usize) -> Self {
        assert!(sh_degree <= 1);
        Self {
            positions: Vec::with_capacity(n),
            raw_scales: Vec::with_capacity(n),
            raw_rotations: Vec::with_capacity(n),
            raw_opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n * (sh_degree + 1) * (sh_degree + 1)),
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of SH coefficient triples per Gaussian.
    pub fn basis(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::DegenerateInput("empty cloud".into()));
        }
        let b = self.basis();
        if self.raw_scales.len() != n
            || self.raw_rotations.len() != n
            || self.raw_opacities.len() != n
            || self.colors.len() != n * b
        {
            return Err(Error::ShapeMismatch(format!(
                "cloud arrays disagree on N={n} (B={b})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn activated_scale(&self, i: usize) -> Vector3<f64> {
        self.raw_scales[i].map(f64::exp)
    }

    #[inline]
    pub fn activated_opacity(&self, i: usize) -> f64 {
        sigmoid(self.raw_opacities[i])
    }

    #[inline]
    pub fn sh_coeffs(&self, i: usize) -> &[Vector3<f64>] {
        let b = self.basis();
        &self.colors[i * b..(i + 1) * b]
    }

    /// Flatten all parameters Gaussian-major:
    /// `[pos(3), raw_scale(3), raw_rot(4), raw_opacity(1), colors(3B)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let b = self.basis();
        let mut out = Vec::with_capacity(self.len() * (11 + 3 * b));
        for i in 0..self.len() {
            out.extend_from_slice(self.positions[i].as_slice());
            out.extend_from_slice(self.raw_scales[i].as_slice());
            out.extend_from_slice(self.raw_rotations[i].as_slice());
            out.push(self.raw_opacities[i]);
            for c in self.sh_coeffs(i) {
                out.extend_from_slice(c.as_slice());
            }
        }
        out
    }

    /// Rebuild a cloud with this one's shape from a flat parameter vector.
    pub fn from_flat(&self, flat: &[f64]) -> GaussianCloud {
        let b = self.basis();
        let stride = 11 + 3 * b;
        assert_eq!(flat.len(), self.len() * stride);
        let mut out = GaussianCloud::with_capacity(self.sh_degree, self.len());
        for chunk in flat.chunks_exact(stride) {
            let coeffs: Vec<Vector3<f64>> = chunk[11..]
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            out.push(
                Vector3::new(chunk[0], chunk[1], chunk[2]),
                Vector3::new(chunk[3], chunk[4], chunk[5]),
                Vector4::new(chunk[6], chunk[7], chunk[8], chunk[9]),
                chunk[10],
                &coeffs,
            );
        }
        out
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        raw_scale: Vector3<f64>,
        raw_rotation: Vector4<f64>,
        raw_opacity: f64,
        coeffs: &[Vector3<f64>],
    ) {
        assert_eq!(coeffs.len(), self.basis());
        self.positions.push(position);
        self.raw_scales.push(raw_scale);
        self.raw_rotations.push(raw_rotation);
        self.raw_opacities.push(raw_opacity);
        self.colors.extend_from_slice(coeffs);
    }
}

/// Pinhole camera with a world→camera rigid pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub focal: (f64, f64),
    pub principal: (f64, f64),
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).norm();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateInput("camera rotation not in SO(3)".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("zero image dimension".into()));
        }
        if self.focal.0 <= 0.0 || self.focal.1 <= 0.0 {
            return Err(Error::InvalidConfig("non-positive focal length".into()));
        }
        if self.near <= 0.0 {
            return Err(Error::InvalidConfig("non-positive near plane".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// World point → camera space.
    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Pixel → NDC, the affine bijection of `[-0.5, W-0.5]` onto `[-1, 1]`.
    #[inline]
    pub fn pixel_to_ndc(&self, px: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            2.0 * (px.x + 0.5) / self.width as f64 - 1.0,
            2.0 * (px.y + 0.5) / self.height as f64 - 1.0,
        )
    }
}

/// Screen-space footprint of one projected Gaussian.
#[derive(Clone, Debug, Default)]
pub struct Projected2D {
    pub center_px: Vector2<f64>,
    pub center_ndc: Vector2<f64>,
    pub depth_cam: f64,
    pub cov2d: Matrix2<f64>,
    pub radius_px: f64,
    pub culled: bool,
}

/// Rotation matrix from an unnormalized quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(raw_q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let n = raw_q.norm();
    if n <= 0.0 || !n.is_finite() {
        return Err(Error::DegenerateInput("zero-norm quaternion".into()));
    }
    let q = raw_q / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// ∂R/∂q̂ for a unit quaternion, one 3×3 slice per component `(w, x, y, z)`.
fn rotation_jacobian_unit(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw quaternion,
/// chaining through the normalization.
pub fn rotation_backward(raw_q: &Vector4<f64>, d_rot: &Matrix3<f64>) -> Vector4<f64> {
    let n = raw_q.norm();
    let q = raw_q / n;
    let slices = rotation_jacobian_unit(&q);
    let mut d_unit = Vector4::zeros();
    for k in 0..4 {
        d_unit[k] = d_rot.component_mul(&slices[k]).sum();
    }
    // d q̂ / d q = (I − q̂ q̂ᵀ) / ‖q‖
    (d_unit - q * q.dot(&d_unit)) / n
}

/// World covariance Σ = R diag(exp(s))² Rᵀ.
pub fn build_covariance(raw_scale: &Vector3<f64>, raw_q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let rot = quat_to_rotation(raw_q)?;
    let d = Matrix3::from_diagonal(&raw_scale.map(|s| (2.0 * s).exp()));
    let sigma = rot * d * rot.transpose();
    // Symmetrize against rounding.
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Gradients of a loss through `build_covariance`.
///
/// `d_sigma` is dL/dΣ (3×3, symmetrized internally). Returns
/// (dL/d raw_scale, dL/d raw_q).
pub fn covariance_backward(
    raw_scale: &Vector3<f64>,
    raw_q: &Vector4<f64>,
    d_sigma: &Matrix3<f64>,
) -> (Vector3<f64>, Vector4<f64>) {
    let g = (d_sigma + d_sigma.transpose()) * 0.5;
    let rot = quat_to_rotation(raw_q).expect("quaternion validated in forward");
    let d = Matrix3::from_diagonal(&raw_scale.map(|s| (2.0 * s).exp()));

    // Σ = R D Rᵀ with symmetric G: dL/dR = 2 G R D, dL/dD = Rᵀ G R.
    let d_rot = 2.0 * g * rot * d;
    let inner = rot.transpose() * g * rot;
    let d_scale = Vector3::new(
        inner[(0, 0)] * 2.0 * (2.0 * raw_scale[0]).exp(),
        inner[(1, 1)] * 2.0 * (2.0 * raw_scale[1]).exp(),
        inner[(2, 2)] * 2.0 * (2.0 * raw_scale[2]).exp(),
    );
    (d_scale, rotation_backward(raw_q, &d_rot))
}

/// EWA Jacobian pieces at camera-space point `t`, with the frustum clamp.
struct PerspectiveJacobian {
    j: Matrix2x3<f64>,
    /// Clamped ratios tx/tz, ty/tz and whether each was clamped.
    u: f64,
    v: f64,
    u_clamped: bool,
    v_clamped: bool,
}

fn perspective_jacobian(t: &Vector3<f64>, camera: &Camera) -> PerspectiveJacobian {
    let (fx, fy) = camera.focal;
    let lim_x = FRUSTUM_CLAMP * 0.5 * camera.width as f64 / fx;
    let lim_y = FRUSTUM_CLAMP * 0.5 * camera.height as f64 / fy;
    let ru = t.x / t.z;
    let rv = t.y / t.z;
    let u = ru.clamp(-lim_x, lim_x);
    let v = rv.clamp(-lim_y, lim_y);
    let j = Matrix2x3::new(
        fx / t.z,
        0.0,
        -fx * u / t.z,
        0.0,
        fy / t.z,
        -fy * v / t.z,
    );
    PerspectiveJacobian {
        j,
        u,
        v,
        u_clamped: u != ru,
        v_clamped: v != rv,
    }
}

/// Project one Gaussian into screen space.
pub fn project(
    position: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    camera: &Camera,
) -> Projected2D {
    let t = camera.to_camera(position);
    if t.z <= camera.near {
        return Projected2D {
            depth_cam: t.z,
            culled: true,
            ..Default::default()
        };
    }
    let (fx, fy) = camera.focal;
    let (cx, cy) = camera.principal;
    let center_px = Vector2::new(fx * t.x / t.z + cx, fy * t.y / t.z + cy);
    let pj = perspective_jacobian(&t, camera);
    let m = pj.j * camera.rotation;
    let mut cov2d = m * cov3d * m.transpose();
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let radius_px = (3.0 * max_eigenvalue_2x2(&cov2d).sqrt()).ceil();
    Projected2D {
        center_px,
        center_ndc: camera.pixel_to_ndc(center_px),
        depth_cam: t.z,
        cov2d,
        radius_px,
        culled: false,
    }
}

/// Larger eigenvalue of a symmetric 2×2 matrix.
pub fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    mid + (half * half + m[(0, 1)] * m[(1, 0)]).sqrt()
}

/// Per-Gaussian gradients produced by pulling screen-space gradients back
/// through the projection.
pub struct ProjectionGrads {
    pub d_position: Vector3<f64>,
    pub d_raw_scale: Vector3<f64>,
    pub d_raw_rotation: Vector4<f64>,
}

/// Backward pass of [`project`].
///
/// `d_center_px` is dL/d(center_px) and `d_cov2d` is dL/d(cov2d); both refer
/// to the un-culled branch. Culled Gaussians carry no gradient.
pub fn project_backward(
    position: &Vector3<f64>,
    raw_scale: &Vector3<f64>,
    raw_q: &Vector4<f64>,
    camera: &Camera,
    d_center_px: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
) -> ProjectionGrads {
    let t = camera.to_camera(position);
    let (fx, fy) = camera.focal;
    let pj = perspective_jacobian(&t, camera);
    let rot = quat_to_rotation(raw_q).expect("quaternion validated in forward");
    let d = Matrix3::from_diagonal(&raw_scale.map(|s| (2.0 * s).exp()));
    let sigma = rot * d * rot.transpose();
    let m = pj.j * camera.rotation;

    let g2 = (d_cov2d + d_cov2d.transpose()) * 0.5;

    // cov2d = M Σ Mᵀ (+ const): dL/dΣ = Mᵀ G M, dL/dM = 2 G M Σ.
    let d_sigma = m.transpose() * g2 * m;
    let d_m = 2.0 * g2 * m * sigma;
    let d_j = d_m * camera.rotation.transpose();

    // J = [[fx/tz, 0, -fx·u/tz], [0, fy/tz, -fy·v/tz]].
    let tz = t.z;
    let mut d_t = Vector3::zeros();
    d_t.z += d_j[(0, 0)] * (-fx / (tz * tz));
    d_t.z += d_j[(1, 1)] * (-fy / (tz * tz));
    d_t.z += d_j[(0, 2)] * (fx * pj.u / (tz * tz));
    d_t.z += d_j[(1, 2)] * (fy * pj.v / (tz * tz));
    if !pj.u_clamped {
        let du = d_j[(0, 2)] * (-fx / tz);
        d_t.x += du / tz;
        d_t.z += du * (-t.x / (tz * tz));
    }
    if !pj.v_clamped {
        let dv = d_j[(1, 2)] * (-fy / tz);
        d_t.y += dv / tz;
        d_t.z += dv * (-t.y / (tz * tz));
    }

    // center_px = (fx·tx/tz + cx, fy·ty/tz + cy).
    d_t.x += d_center_px.x * fx / tz;
    d_t.y += d_center_px.y * fy / tz;
    d_t.z += d_center_px.x * (-fx * t.x / (tz * tz));
    d_t.z += d_center_px.y * (-fy * t.y / (tz * tz));

    let d_position = camera.rotation.transpose() * d_t;
    let (d_raw_scale, d_raw_rotation) = covariance_backward(raw_scale, raw_q, &d_sigma);
    ProjectionGrads {
        d_position,
        d_raw_scale,
        d_raw_rotation,
    }
}

/// Evaluated view-dependent color and the state needed for its backward.
pub struct ShColor {
    pub rgb: Vector3<f64>,
    /// Per-channel clamp state: -1 clamped at 0, +1 clamped at 1, 0 free.
    pub clamped: [i8; 3],
    pub dir: Vector3<f64>,
    pub dist: f64,
}

/// Evaluate the SH color of Gaussian `i` as seen from `cam_center`,
/// clamped to `[0, 1]` per channel.
pub fn eval_sh_color(cloud: &GaussianCloud, i: usize, cam_center: &Vector3<f64>) -> ShColor {
    let coeffs = cloud.sh_coeffs(i);
    let rel = cloud.positions[i] - cam_center;
    let dist = rel.norm().max(1e-12);
    let dir = rel / dist;
    let mut rgb = Vector3::repeat(0.5) + coeffs[0] * SH_C0;
    if cloud.sh_degree >= 1 {
        rgb += coeffs[1] * (-SH_C1 * dir.y);
        rgb += coeffs[2] * (SH_C1 * dir.z);
        rgb += coeffs[3] * (-SH_C1 * dir.x);
    }
    let mut clamped = [0i8; 3];
    for c in 0..3 {
        if rgb[c] < 0.0 {
            rgb[c] = 0.0;
            clamped[c] = -1;
        } else if rgb[c] > 1.0 {
            rgb[c] = 1.0;
            clamped[c] = 1;
        }
    }
    ShColor {
        rgb,
        clamped,
        dir,
        dist,
    }
}

/// Backward of [`eval_sh_color`]: routes dL/d(rgb) into the SH coefficients
/// of Gaussian `i` and (for degree 1) into its position via the view
/// direction.
pub fn sh_color_backward(
    cloud: &GaussianCloud,
    i: usize,
    state: &ShColor,
    d_rgb: &Vector3<f64>,
    d_coeffs: &mut [Vector3<f64>],
    d_position: &mut Vector3<f64>,
) {
    let mut g = *d_rgb;
    for c in 0..3 {
        if state.clamped[c] != 0 {
            g[c] = 0.0;
        }
    }
    d_coeffs[0] += g * SH_C0;
    if cloud.sh_degree >= 1 {
        let coeffs = cloud.sh_coeffs(i);
        d_coeffs[1] += g * (-SH_C1 * state.dir.y);
        d_coeffs[2] += g * (SH_C1 * state.dir.z);
        d_coeffs[3] += g * (-SH_C1 * state.dir.x);
        // dL/d dir from the linear degree-1 basis.
        let d_dir = Vector3::new(
            -SH_C1 * coeffs[3].dot(&g),
            -SH_C1 * coeffs[1].dot(&g),
            SH_C1 * coeffs[2].dot(&g),
        );
        // dir = rel/‖rel‖: d dir/d rel = (I − dir dirᵀ)/‖rel‖.
        let proj = d_dir - state.dir * state.dir.dot(&d_dir);
        *d_position += proj / state.dist;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera {
        Camera {
            focal: (60.0, 60.0),
            principal: (32.0, 32.0),
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            width: 64,
            height: 64,
            near: 0.2,
        }
    }

    #[test]
    fn quat_identity() {
        let r = quat_to_rotation(&Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn quat_half_turn_about_z() {
        let r = quat_to_rotation(&Vector4::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert_relative_eq!(r, expected, epsilon = 1e-14);
    }

    #[test]
    fn quat_normalization_invariance() {
        let r = quat_to_rotation(&Vector4::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn quat_zero_norm_rejected() {
        assert!(quat_to_rotation(&Vector4::zeros()).is_err());
    }

    #[test]
    fn quat_orthonormality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            if q.norm() < 1e-3 {
                continue;
            }
            let r = quat_to_rotation(&q).unwrap();
            assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn covariance_unit_isotropic() {
        let s = build_covariance(&Vector3::zeros(), &Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(s, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn covariance_axis_scaling() {
        let s = build_covariance(
            &Vector3::new(2.0f64.ln(), 0.0, 0.0),
            &Vector4::new(1.0, 0.0, 0.0, 0.0),
        )
        .unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert_relative_eq!(s, expected, epsilon = 1e-12);
    }

    // Eigensolver oracle: eigenvalues of Σ must equal exp(raw_scale)² up to
    // permutation for random parameters.
    #[test]
    fn covariance_eigenvalues_match_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            let q = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            if q.norm() < 1e-3 {
                continue;
            }
            let sigma = build_covariance(&s, &q).unwrap();
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut expect: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, x) in eig.iter().zip(&expect) {
                assert_relative_eq!(e, x, max_relative = 1e-9);
            }
            assert!(eig[0] > 0.0);
        }
    }

    #[test]
    fn project_optical_axis() {
        let cam = test_camera();
        let p = project(
            &Vector3::new(0.0, 0.0, 3.0),
            &Matrix3::identity(),
            &cam,
        );
        assert!(!p.culled);
        assert_relative_eq!(p.center_px.x, 32.0, epsilon = 1e-12);
        assert_relative_eq!(p.center_px.y, 32.0, epsilon = 1e-12);
    }

    #[test]
    fn project_near_cull() {
        let cam = test_camera();
        let p = project(&Vector3::new(0.0, 0.0, 0.1), &Matrix3::identity(), &cam);
        assert!(p.culled);
    }

    // Perspective scaling: an isotropic unit Gaussian at depth d vs 2d has a
    // pre-low-pass screen std in ratio 2:1.
    #[test]
    fn project_radius_depth_scaling() {
        let cam = Camera {
            focal: (600.0, 600.0),
            ..test_camera()
        };
        let near = project(&Vector3::new(0.0, 0.0, 10.0), &Matrix3::identity(), &cam);
        let far = project(&Vector3::new(0.0, 0.0, 20.0), &Matrix3::identity(), &cam);
        let sd_near = (near.cov2d[(0, 0)] - LOW_PASS).sqrt();
        let sd_far = (far.cov2d[(0, 0)] - LOW_PASS).sqrt();
        assert_relative_eq!(sd_near / sd_far, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn ndc_mapping_is_affine_bijection() {
        let cam = test_camera();
        let lo = cam.pixel_to_ndc(Vector2::new(-0.5, -0.5));
        let hi = cam.pixel_to_ndc(Vector2::new(63.5, 63.5));
        assert_relative_eq!(lo, Vector2::new(-1.0, -1.0), epsilon = 1e-14);
        assert_relative_eq!(hi, Vector2::new(1.0, 1.0), epsilon = 1e-14);
    }

    // Finite-difference validation of the projection backward pass, using a
    // scalar probe L = a·center_px + B:cov2d.
    #[test]
    fn projection_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cam = Camera {
            rotation: quat_to_rotation(&Vector4::new(0.9, 0.1, -0.2, 0.15)).unwrap(),
            translation: Vector3::new(0.05, -0.1, 0.2),
            ..test_camera()
        };
        for _ in 0..20 {
            let pos = Vector3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(2.0..5.0),
            );
            let scale = Vector3::from_fn(|_, _| rng.gen_range(-1.5..0.0f64));
            let q = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            if q.norm() < 0.3 {
                continue;
            }
            let a = Vector2::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            let b = Matrix2::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));
            let b = (b + b.transpose()) * 0.5;

            let probe = |pos: &Vector3<f64>, scale: &Vector3<f64>, q: &Vector4<f64>| {
                let sigma = build_covariance(scale, q).unwrap();
                let pr = project(pos, &sigma, &cam);
                a.dot(&pr.center_px) + b.component_mul(&pr.cov2d).sum()
            };

            let grads = project_backward(&pos, &scale, &q, &cam, &a, &b);
            let h = 1e-5;
            for k in 0..3 {
                let mut p1 = pos;
                let mut p2 = pos;
                p1[k] += h;
                p2[k] -= h;
                let fd = (probe(&p1, &scale, &q) - probe(&p2, &scale, &q)) / (2.0 * h);
                assert_relative_eq!(grads.d_position[k], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
            for k in 0..3 {
                let mut s1 = scale;
                let mut s2 = scale;
                s1[k] += h;
                s2[k] -= h;
                let fd = (probe(&pos, &s1, &q) - probe(&pos, &s2, &q)) / (2.0 * h);
                assert_relative_eq!(grads.d_raw_scale[k], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
            for k in 0..4 {
                let mut q1 = q;
                let mut q2 = q;
                q1[k] += h;
                q2[k] -= h;
                let fd = (probe(&pos, &scale, &q1) - probe(&pos, &scale, &q2)) / (2.0 * h);
                assert_relative_eq!(
                    grads.d_raw_rotation[k],
                    fd,
                    max_relative = 1e-5,
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn sh_color_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let mut cloud = GaussianCloud::with_capacity(1, 1);
            let coeffs: Vec<Vector3<f64>> = (0..4)
                .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3f64)))
                .collect();
            cloud.push(
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(2.0..4.0),
                ),
                Vector3::zeros(),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                0.0,
                &coeffs,
            );
            let cam_center = Vector3::new(0.1, -0.2, -1.0);
            let d_rgb = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));

            let state = eval_sh_color(&cloud, 0, &cam_center);
            if state.clamped.iter().any(|&c| c != 0) {
                continue;
            }
            let mut d_coeffs = vec![Vector3::zeros(); 4];
            let mut d_pos = Vector3::zeros();
            sh_color_backward(&cloud, 0, &state, &d_rgb, &mut d_coeffs, &mut d_pos);

            let h = 1e-6;
            for k in 0..3 {
                let mut c1 = cloud.clone();
                let mut c2 = cloud.clone();
                c1.positions[0][k] += h;
                c2.positions[0][k] -= h;
                let f1 = eval_sh_color(&c1, 0, &cam_center).rgb.dot(&d_rgb);
                let f2 = eval_sh_color(&c2, 0, &cam_center).rgb.dot(&d_rgb);
                let fd = (f1 - f2) / (2.0 * h);
                assert_relative_eq!(d_pos[k], fd, max_relative = 1e-4, epsilon = 1e-9);
            }
            for b in 0..4 {
                for k in 0..3 {
                    let mut c1 = cloud.clone();
                    let mut c2 = cloud.clone();
                    c1.colors[b][k] += h;
                    c2.colors[b][k] -= h;
                    let f1 = eval_sh_color(&c1, 0, &cam_center).rgb.dot(&d_rgb);
                    let f2 = eval_sh_color(&c2, 0, &cam_center).rgb.dot(&d_rgb);
                    let fd = (f1 - f2) / (2.0 * h);
                    assert_relative_eq!(d_coeffs[b][k], fd, max_relative = 1e-4, epsilon = 1e-9);
                }
            }
        }
    }
}
