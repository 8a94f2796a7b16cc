//! Gated multimodal fusion modules for the mouth and face branches.
//!
//! Mouth (audio-centric):
//!   f_s′ = proj_s(f_s),  f_a′ = proj_a(f_a)
//!   ω = σ(gate([f_s′; f_a′])),  ̃f_a = ω ⊙ f_a′
//!   Δμ = head([f_s′; ̃f_a])
//!
//! Face (audio–expression):
//!   ω = σ(gate([f_a′; f_e′])),  ̃f_a = ω ⊙ f_a′,  f_ae = [ ̃f_a; f_e′]
//!   (Δμ, Δs, Δq) = head([f_a; f_ae; f_s])
//!
//! Note the face head consumes the raw f_a and f_s, not their projections.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deform::nn::{Linear, Mlp, MlpCache};
use crate::gsmath::sigmoid;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgfConfig {
    /// Output width of the per-channel projection layers.
    pub proj_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for MgfConfig {
    fn default() -> Self {
        Self {
            proj_dim: 16,
            hidden: 64,
            hidden_layers: 2,
        }
    }
}

fn head_dims(cfg: &MgfConfig, in_dim: usize, out_dim: usize) -> Vec<usize> {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat(cfg.hidden).take(cfg.hidden_layers));
    dims.push(out_dim);
    dims
}

/// Inside-mouth fusion module; predicts position deformation only.
#[derive(Clone, Debug, PartialEq)]
pub struct MgfMouth {
    pub proj_s: Linear,
    pub proj_a: Linear,
    pub gate: Linear,
    pub head: Mlp,
}

/// Saved forward state for one mouth evaluation.
#[derive(Clone, Debug, Default)]
pub struct MouthCache {
    fs_p: Vec<f64>,
    fa_p: Vec<f64>,
    gate_in: Vec<f64>,
    gate_pre: Vec<f64>,
    omega: Vec<f64>,
    fuse: Vec<f64>,
    head: MlpCache,
}

impl MgfMouth {
    pub fn new<R: Rng>(
        cfg: &MgfConfig,
        dim_spatial: usize,
        dim_audio: usize,
        zero_head: bool,
        rng: &mut R,
    ) -> Self {
        let p = cfg.proj_dim;
        let mut head = Mlp::random(&head_dims(cfg, 2 * p, 3), rng);
        if zero_head {
            head.zero_last_layer();
        }
        Self {
            proj_s: Linear::random(dim_spatial, p, rng),
            proj_a: Linear::random(dim_audio, p, rng),
            gate: Linear::random(2 * p, p, rng),
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj_s: Linear::zeros(self.proj_s.in_dim, self.proj_s.out_dim),
            proj_a: Linear::zeros(self.proj_a.in_dim, self.proj_a.out_dim),
            gate: Linear::zeros(self.gate.in_dim, self.gate.out_dim),
            head: self.head.zeros_like(),
        }
    }

    pub fn forward(&self, f_s: &[f64], f_a: &[f64], cache: &mut MouthCache) -> Vector3<f64> {
        self.proj_s.forward(f_s, &mut cache.fs_p);
        self.proj_a.forward(f_a, &mut cache.fa_p);
        cache.gate_in.clear();
        cache.gate_in.extend_from_slice(&cache.fs_p);
        cache.gate_in.extend_from_slice(&cache.fa_p);
        self.gate.forward(&cache.gate_in, &mut cache.gate_pre);
        cache.omega.clear();
        cache.omega.extend(cache.gate_pre.iter().map(|&z| sigmoid(z)));
        cache.fuse.clear();
        cache.fuse.extend_from_slice(&cache.fs_p);
        cache
            .fuse
            .extend(cache.omega.iter().zip(&cache.fa_p).map(|(w, a)| w * a));
        let out = self.head.forward(&cache.fuse, &mut cache.head);
        Vector3::new(out[0], out[1], out[2])
    }

    /// Accumulates parameter gradients into `grads`; returns
    /// (dL/d f_s, dL/d f_a).
    pub fn backward(
        &self,
        f_s: &[f64],
        f_a: &[f64],
        cache: &MouthCache,
        d_out: &Vector3<f64>,
        grads: &mut MgfMouth,
    ) -> (Vec<f64>, Vec<f64>) {
        let p = self.proj_a.out_dim;
        let d_fuse = self
            .head
            .backward(&cache.head, d_out.as_slice(), &mut grads.head);
        let mut d_fs_p = d_fuse[..p].to_vec();
        let d_fa_mod = &d_fuse[p..];
        let mut d_fa_p = vec![0.0; p];
        let mut d_gate_pre = vec![0.0; p];
        for k in 0..p {
            let w = cache.omega[k];
            d_fa_p[k] += d_fa_mod[k] * w;
            // ∂ ̃f_a/∂z through the sigmoid gate.
            d_gate_pre[k] = d_fa_mod[k] * cache.fa_p[k] * w * (1.0 - w);
        }
        let mut d_gate_in = vec![0.0; 2 * p];
        self.gate
            .backward(&cache.gate_in, &d_gate_pre, &mut grads.gate, &mut d_gate_in);
        for k in 0..p {
            d_fs_p[k] += d_gate_in[k];
            d_fa_p[k] += d_gate_in[p + k];
        }
        let mut d_fs = vec![0.0; self.proj_s.in_dim];
        let mut d_fa = vec![0.0; self.proj_a.in_dim];
        self.proj_s.backward(f_s, &d_fs_p, &mut grads.proj_s, &mut d_fs);
        self.proj_a.backward(f_a, &d_fa_p, &mut grads.proj_a, &mut d_fa);
        (d_fs, d_fa)
    }

    pub fn param_count(&self) -> usize {
        self.proj_s.param_count()
            + self.proj_a.param_count()
            + self.gate.param_count()
            + self.head.param_count()
    }

    pub fn dim_audio(&self) -> usize {
        self.proj_a.in_dim
    }

    /// Sizing that reproduces this module through [`MgfMouth::new`].
    pub fn config(&self) -> MgfConfig {
        MgfConfig {
            proj_dim: self.proj_a.out_dim,
            hidden: self.head.layers.first().map_or(0, |l| l.out_dim),
            hidden_layers: self.head.layers.len() - 1,
        }
    }

    pub fn collect_params(&self, out: &mut Vec<f64>) {
        self.proj_s.collect_params(out);
        self.proj_a.collect_params(out);
        self.gate.collect_params(out);
        self.head.collect_params(out);
    }

    pub fn assign_params(&mut self, src: &mut &[f64]) {
        self.proj_s.assign_params(src);
        self.proj_a.assign_params(src);
        self.gate.assign_params(src);
        self.head.assign_params(src);
    }
}

/// Face deformation output, partitioned (3, 3, 4).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FaceDelta {
    pub d_position: Vector3<f64>,
    pub d_raw_scale: Vector3<f64>,
    pub d_raw_rotation: Vector4<f64>,
}

/// Face fusion module; predicts the full deformation set.
#[derive(Clone, Debug, PartialEq)]
pub struct MgfFace {
    pub proj_a: Linear,
    pub proj_e: Linear,
    pub gate: Linear,
    pub head: Mlp,
}

#[derive(Clone, Debug, Default)]
pub struct FaceCache {
    fa_p: Vec<f64>,
    fe_p: Vec<f64>,
    gate_in: Vec<f64>,
    gate_pre: Vec<f64>,
    omega: Vec<f64>,
    fuse: Vec<f64>,
    head: MlpCache,
}

impl MgfFace {
    pub fn new<R: Rng>(
        cfg: &MgfConfig,
        dim_spatial: usize,
        dim_audio: usize,
        dim_expr: usize,
        zero_head: bool,
        rng: &mut R,
    ) -> Self {
        let p = cfg.proj_dim;
        let fuse_dim = dim_audio + 2 * p + dim_spatial;
        let mut head = Mlp::random(&head_dims(cfg, fuse_dim, 10), rng);
        if zero_head {
            head.zero_last_layer();
        }
        Self {
            proj_a: Linear::random(dim_audio, p, rng),
            proj_e: Linear::random(dim_expr, p, rng),
            gate: Linear::random(2 * p, p, rng),
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj_a: Linear::zeros(self.proj_a.in_dim, self.proj_a.out_dim),
            proj_e: Linear::zeros(self.proj_e.in_dim, self.proj_e.out_dim),
            gate: Linear::zeros(self.gate.in_dim, self.gate.out_dim),
            head: self.head.zeros_like(),
        }
    }

    pub fn forward(
        &self,
        f_s: &[f64],
        f_a: &[f64],
        f_e: &[f64],
        cache: &mut FaceCache,
    ) -> FaceDelta {
        self.proj_a.forward(f_a, &mut cache.fa_p);
        self.proj_e.forward(f_e, &mut cache.fe_p);
        cache.gate_in.clear();
        cache.gate_in.extend_from_slice(&cache.fa_p);
        cache.gate_in.extend_from_slice(&cache.fe_p);
        self.gate.forward(&cache.gate_in, &mut cache.gate_pre);
        cache.omega.clear();
        cache.omega.extend(cache.gate_pre.iter().map(|&z| sigmoid(z)));
        cache.fuse.clear();
        cache.fuse.extend_from_slice(f_a);
        cache
            .fuse
            .extend(cache.omega.iter().zip(&cache.fa_p).map(|(w, a)| w * a));
        cache.fuse.extend_from_slice(&cache.fe_p);
        cache.fuse.extend_from_slice(f_s);
        let out = self.head.forward(&cache.fuse, &mut cache.head);
        FaceDelta {
            d_position: Vector3::new(out[0], out[1], out[2]),
            d_raw_scale: Vector3::new(out[3], out[4], out[5]),
            d_raw_rotation: Vector4::new(out[6], out[7], out[8], out[9]),
        }
    }

    /// Accumulates parameter gradients into `grads`; returns
    /// (dL/d f_s, dL/d f_a, dL/d f_e).
    pub fn backward(
        &self,
        f_a: &[f64],
        f_e: &[f64],
        cache: &FaceCache,
        d_out: &FaceDelta,
        grads: &mut MgfFace,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.proj_a.out_dim;
        let da = self.proj_a.in_dim;
        let ds = self.head.layers[0].in_dim - da - 2 * p;
        let mut dy = Vec::with_capacity(10);
        dy.extend_from_slice(d_out.d_position.as_slice());
        dy.extend_from_slice(d_out.d_raw_scale.as_slice());
        dy.extend_from_slice(d_out.d_raw_rotation.as_slice());
        let d_fuse = self.head.backward(&cache.head, &dy, &mut grads.head);

        let mut d_fa = d_fuse[..da].to_vec();
        let d_fa_mod = &d_fuse[da..da + p];
        let mut d_fe_p = d_fuse[da + p..da + 2 * p].to_vec();
        let d_fs = d_fuse[da + 2 * p..da + 2 * p + ds].to_vec();

        let mut d_fa_p = vec![0.0; p];
        let mut d_gate_pre = vec![0.0; p];
        for k in 0..p {
            let w = cache.omega[k];
            d_fa_p[k] += d_fa_mod[k] * w;
            d_gate_pre[k] = d_fa_mod[k] * cache.fa_p[k] * w * (1.0 - w);
        }
        let mut d_gate_in = vec![0.0; 2 * p];
        self.gate
            .backward(&cache.gate_in, &d_gate_pre, &mut grads.gate, &mut d_gate_in);
        for k in 0..p {
            d_fa_p[k] += d_gate_in[k];
            d_fe_p[k] += d_gate_in[p + k];
        }
        let mut d_fe = vec![0.0; self.proj_e.in_dim];
        self.proj_a.backward(f_a, &d_fa_p, &mut grads.proj_a, &mut d_fa);
        self.proj_e.backward(f_e, &d_fe_p, &mut grads.proj_e, &mut d_fe);
        (d_fs, d_fa, d_fe)
    }

    pub fn param_count(&self) -> usize {
        self.proj_a.param_count()
            + self.proj_e.param_count()
            + self.gate.param_count()
            + self.head.param_count()
    }

    pub fn dim_audio(&self) -> usize {
        self.proj_a.in_dim
    }

    pub fn dim_expr(&self) -> usize {
        self.proj_e.in_dim
    }

    /// Sizing that reproduces this module through [`MgfFace::new`].
    pub fn config(&self) -> MgfConfig {
        MgfConfig {
            proj_dim: self.proj_a.out_dim,
            hidden: self.head.layers.first().map_or(0, |l| l.out_dim),
            hidden_layers: self.head.layers.len() - 1,
        }
    }

    pub fn collect_params(&self, out: &mut Vec<f64>) {
        self.proj_a.collect_params(out);
        self.proj_e.collect_params(out);
        self.gate.collect_params(out);
        self.head.collect_params(out);
    }

    pub fn assign_params(&mut self, src: &mut &[f64]) {
        self.proj_a.assign_params(src);
        self.proj_e.assign_params(src);
        self.gate.assign_params(src);
        self.head.assign_params(src);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, FD_STEP, FD_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> MgfConfig {
        MgfConfig {
            proj_dim: 4,
            hidden: 8,
            hidden_layers: 2,
        }
    }

    fn rand_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_gate_halves_audio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MgfMouth::new(&small_cfg(), 6, 5, false, &mut rng);
        m.gate = Linear::zeros(m.gate.in_dim, m.gate.out_dim);
        let f_s = rand_vec(6, &mut rng);
        let f_a = rand_vec(5, &mut rng);
        let mut cache = MouthCache::default();
        m.forward(&f_s, &f_a, &mut cache);
        for (w, (fuse_mod, fa_p)) in cache
            .omega
            .iter()
            .zip(cache.fuse[4..].iter().zip(&cache.fa_p))
        {
            assert!((w - 0.5).abs() < 1e-15);
            assert!((fuse_mod - 0.5 * fa_p).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_gate_suppresses_audio_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MgfMouth::new(&small_cfg(), 6, 5, false, &mut rng);
        for b in &mut m.gate.bias {
            *b = -20.0;
        }
        m.gate.weight.iter_mut().for_each(|w| *w = 0.0);
        let f_s = rand_vec(6, &mut rng);
        let f_a1 = rand_vec(5, &mut rng);
        let f_a2 = rand_vec(5, &mut rng);
        let mut c1 = MouthCache::default();
        let mut c2 = MouthCache::default();
        let y1 = m.forward(&f_s, &f_a1, &mut c1);
        let y2 = m.forward(&f_s, &f_a2, &mut c2);
        assert!((y1 - y2).norm() < 1e-8, "audio leaked through closed gate");
    }

    #[test]
    fn mouth_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let dim_s = rng.gen_range(2..8);
            let dim_a = rng.gen_range(2..8);
            let m = MgfMouth::new(&small_cfg(), dim_s, dim_a, false, &mut rng);
            let f_s = rand_vec(dim_s, &mut rng);
            let f_a = rand_vec(dim_a, &mut rng);
            let d_out = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64));

            let mut cache = MouthCache::default();
            let mut grads = m.zeros_like();
            m.forward(&f_s, &f_a, &mut cache);
            let (d_fs, d_fa) = m.backward(&f_s, &f_a, &cache, &d_out, &mut grads);

            let mut theta = Vec::new();
            m.collect_params(&mut theta);
            let mut analytic = Vec::new();
            grads.collect_params(&mut analytic);
            let f = |p: &[f64]| {
                let mut net = m.clone();
                let mut src = p;
                net.assign_params(&mut src);
                let mut c = MouthCache::default();
                net.forward(&f_s, &f_a, &mut c).dot(&d_out)
            };
            let rep = check_gradient("mouth-params", &f, &|_| 0, &theta, &analytic, FD_STEP, 1e-7);
            assert!(rep.passes(FD_TOL), "trial {trial}: {rep}");

            let fx = |x: &[f64]| {
                let mut c = MouthCache::default();
                m.forward(&x[..dim_s], &x[dim_s..], &mut c).dot(&d_out)
            };
            let x: Vec<f64> = f_s.iter().chain(&f_a).copied().collect();
            let dx: Vec<f64> = d_fs.iter().chain(&d_fa).copied().collect();
            let rep = check_gradient("mouth-inputs", &fx, &|_| 0, &x, &dx, FD_STEP, 1e-7);
            assert!(rep.passes(FD_TOL), "trial {trial}: {rep}");
        }
    }

    #[test]
    fn face_zero_head_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MgfFace::new(&small_cfg(), 6, 5, 3, true, &mut rng);
        let d = m.forward(
            &rand_vec(6, &mut rng),
            &rand_vec(5, &mut rng),
            &rand_vec(3, &mut rng),
            &mut FaceCache::default(),
        );
        assert_eq!(d.d_position, Vector3::zeros());
        assert_eq!(d.d_raw_scale, Vector3::zeros());
        assert_eq!(d.d_raw_rotation, Vector4::zeros());
    }

    #[test]
    fn face_closed_gate_ignores_projected_audio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = MgfFace::new(&small_cfg(), 6, 5, 3, false, &mut rng);
        for b in &mut m.gate.bias {
            *b = -30.0;
        }
        m.gate.weight.iter_mut().for_each(|w| *w = 0.0);
        let f_s = rand_vec(6, &mut rng);
        let f_a = rand_vec(5, &mut rng);
        let f_e = rand_vec(3, &mut rng);
        let base = m.forward(&f_s, &f_a, &f_e, &mut FaceCache::default());
        // Rescaling proj_a changes only the gated copy of f_a'; with the
        // gate closed the output must not move.
        let mut m2 = m.clone();
        m2.proj_a.scale(3.0);
        let other = m2.forward(&f_s, &f_a, &f_e, &mut FaceCache::default());
        assert!((base.d_position - other.d_position).norm() < 1e-8);
        assert!((base.d_raw_scale - other.d_raw_scale).norm() < 1e-8);
        assert!((base.d_raw_rotation - other.d_raw_rotation).norm() < 1e-8);
    }

    #[test]
    fn face_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..20 {
            let (dim_s, dim_a, dim_e) = (
                rng.gen_range(2..8),
                rng.gen_range(2..8),
                rng.gen_range(2..6),
            );
            let m = MgfFace::new(&small_cfg(), dim_s, dim_a, dim_e, false, &mut rng);
            let f_s = rand_vec(dim_s, &mut rng);
            let f_a = rand_vec(dim_a, &mut rng);
            let f_e = rand_vec(dim_e, &mut rng);
            let d_out = FaceDelta {
                d_position: Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64)),
                d_raw_scale: Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0f64)),
                d_raw_rotation: Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0f64)),
            };
            let probe = |d: &FaceDelta| {
                d.d_position.dot(&d_out.d_position)
                    + d.d_raw_scale.dot(&d_out.d_raw_scale)
                    + d.d_raw_rotation.dot(&d_out.d_raw_rotation)
            };

            let mut cache = FaceCache::default();
            let mut grads = m.zeros_like();
            m.forward(&f_s, &f_a, &f_e, &mut cache);
            let (d_fs, d_fa, d_fe) = m.backward(&f_a, &f_e, &cache, &d_out, &mut grads);

            let mut theta = Vec::new();
            m.collect_params(&mut theta);
            let mut analytic = Vec::new();
            grads.collect_params(&mut analytic);
            let f = |p: &[f64]| {
                let mut net = m.clone();
                let mut src = p;
                net.assign_params(&mut src);
                probe(&net.forward(&f_s, &f_a, &f_e, &mut FaceCache::default()))
            };
            let rep = check_gradient("face-params", &f, &|_| 0, &theta, &analytic, FD_STEP, 1e-7);
            assert!(rep.passes(FD_TOL), "trial {trial}: {rep}");

            let fx = |x: &[f64]| {
                probe(&m.forward(
                    &x[..dim_s],
                    &x[dim_s..dim_s + dim_a],
                    &x[dim_s + dim_a..],
                    &mut FaceCache::default(),
                ))
            };
            let x: Vec<f64> = f_s.iter().chain(&f_a).chain(&f_e).copied().collect();
            let dx: Vec<f64> = d_fs.iter().chain(&d_fa).chain(&d_fe).copied().collect();
            let rep = check_gradient("face-inputs", &fx, &|_| 0, &x, &dx, FD_STEP, 1e-7);
            assert!(rep.passes(FD_TOL), "trial {trial}: {rep}");
        }
    }

    #[test]
    fn gate_bounded_and_modulation_contractive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = MgfMouth::new(&small_cfg(), 6, 5, false, &mut rng);
        for _ in 0..200 {
            let f_s = rand_vec(6, &mut rng);
            let f_a = rand_vec(5, &mut rng);
            let mut c = MouthCache::default();
            m.forward(&f_s, &f_a, &mut c);
            for (k, w) in c.omega.iter().enumerate() {
                assert!(0.0 < *w && *w < 1.0);
                let modulated = c.fuse[4 + k];
                assert!(modulated.abs() <= c.fa_p[k].abs() + 1e-15);
            }
        }
    }
}
