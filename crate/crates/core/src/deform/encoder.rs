//! Tri-plane multiresolution hash position encoder.
//!
//! Three axis-aligned planes (xy, yz, xz), each with L geometrically grown
//! resolution levels backed by a hash table of T entries × F features.
//! A query position projects onto each plane, normalizes by the scene
//! bounding box and bilinearly interpolates the four hashed cell corners of
//! every level; all planes/levels concatenate to a `3·L·F` feature vector.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
const HASH_PRIME: u64 = 2_654_435_761;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub levels: usize,
    pub features: usize,
    pub table_size: usize,
    pub base_resolution: usize,
    pub max_resolution: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            features: 2,
            table_size: 1 << 14,
            base_resolution: 16,
            max_resolution: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneHashEncoder {
    pub levels: usize,
    pub features: usize,
    pub table_size: usize,
    pub resolutions: Vec<usize>,
    pub bbox_min: Vector3<f64>,
    pub bbox_max: Vector3<f64>,
    /// `[plane][level][entry][feature]` flattened.
    pub tables: Vec<f64>,
}

impl TriPlaneHashEncoder {
    pub fn new<R: Rng>(cfg: &EncoderConfig, bbox_min: Vector3<f64>, bbox_max: Vector3<f64>, rng: &mut R) -> Self {
        assert!(cfg.levels >= 1 && cfg.features >= 1 && cfg.table_size >= 1);
        let growth = if cfg.levels > 1 {
            ((cfg.max_resolution as f64) / (cfg.base_resolution as f64))
                .powf(1.0 / (cfg.levels as f64 - 1.0))
        } else {
            1.0
        };
        let resolutions = (0..cfg.levels)
            .map(|l| ((cfg.base_resolution as f64) * growth.powi(l as i32)).round() as usize)
            .collect();
        let total = 3 * cfg.levels * cfg.table_size * cfg.features;
        Self {
            levels: cfg.levels,
            features: cfg.features,
            table_size: cfg.table_size,
            resolutions,
            bbox_min,
            bbox_max,
            tables: (0..total).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    /// Output feature dimension, 3·L·F.
    pub fn output_dim(&self) -> usize {
        3 * self.levels * self.features
    }

    #[inline]
    fn slot(&self, i: u64, j: u64) -> usize {
        ((i ^ j.wrapping_mul(HASH_PRIME)) % self.table_size as u64) as usize
    }

    #[inline]
    fn table_base(&self, plane: usize, level: usize, slot: usize) -> usize {
        ((plane * self.levels + level) * self.table_size + slot) * self.features
    }

    /// Normalized in-plane coordinate and whether the clamp was active.
    #[inline]
    fn normalize(&self, pos: &Vector3<f64>, axis: usize) -> (f64, bool, f64) {
        let ext = (self.bbox_max[axis] - self.bbox_min[axis]).max(1e-12);
        let u = (pos[axis] - self.bbox_min[axis]) / ext;
        let clamped = !(0.0..=1.0).contains(&u);
        (u.clamp(0.0, 1.0), clamped, ext)
    }

    /// Encode one position into the feature vector f_v.
    pub fn encode(&self, pos: &Vector3<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (plane, &(ax, ay)) in PLANE_AXES.iter().enumerate() {
            let (u, _, _) = self.normalize(pos, ax);
            let (v, _, _) = self.normalize(pos, ay);
            for level in 0..self.levels {
                let n = self.resolutions[level] as f64;
                let x = u * n;
                let y = v * n;
                let i0 = (x.floor()).min(n - 1.0).max(0.0);
                let j0 = (y.floor()).min(n - 1.0).max(0.0);
                let tx = x - i0;
                let ty = y - j0;
                let (i0, j0) = (i0 as u64, j0 as u64);
                let c00 = self.table_base(plane, level, self.slot(i0, j0));
                let c10 = self.table_base(plane, level, self.slot(i0 + 1, j0));
                let c01 = self.table_base(plane, level, self.slot(i0, j0 + 1));
                let c11 = self.table_base(plane, level, self.slot(i0 + 1, j0 + 1));
                for f in 0..self.features {
                    out.push(
                        (1.0 - tx) * (1.0 - ty) * self.tables[c00 + f]
                            + tx * (1.0 - ty) * self.tables[c10 + f]
                            + (1.0 - tx) * ty * self.tables[c01 + f]
                            + tx * ty * self.tables[c11 + f],
                    );
                }
            }
        }
        out
    }

    /// Backward of [`encode`]: accumulates dL/d(tables) into `table_grads`
    /// (same layout as `tables`) and dL/d(position) into `d_pos`.
    pub fn encode_backward(
        &self,
        pos: &Vector3<f64>,
        d_out: &[f64],
        table_grads: &mut [f64],
        d_pos: &mut Vector3<f64>,
    ) {
        debug_assert_eq!(d_out.len(), self.output_dim());
        debug_assert_eq!(table_grads.len(), self.tables.len());
        let mut k = 0;
        for (plane, &(ax, ay)) in PLANE_AXES.iter().enumerate() {
            let (u, u_clamped, ext_u) = self.normalize(pos, ax);
            let (v, v_clamped, ext_v) = self.normalize(pos, ay);
            for level in 0..self.levels {
                let n = self.resolutions[level] as f64;
                let x = u * n;
                let y = v * n;
                let i0f = (x.floor()).min(n - 1.0).max(0.0);
                let j0f = (y.floor()).min(n - 1.0).max(0.0);
                let tx = x - i0f;
                let ty = y - j0f;
                let (i0, j0) = (i0f as u64, j0f as u64);
                let c00 = self.table_base(plane, level, self.slot(i0, j0));
                let c10 = self.table_base(plane, level, self.slot(i0 + 1, j0));
                let c01 = self.table_base(plane, level, self.slot(i0, j0 + 1));
                let c11 = self.table_base(plane, level, self.slot(i0 + 1, j0 + 1));
                for f in 0..self.features {
                    let g = d_out[k];
                    k += 1;
                    table_grads[c00 + f] += g * (1.0 - tx) * (1.0 - ty);
                    table_grads[c10 + f] += g * tx * (1.0 - ty);
                    table_grads[c01 + f] += g * (1.0 - tx) * ty;
                    table_grads[c11 + f] += g * tx * ty;
                    let dv_dtx = (self.tables[c10 + f] - self.tables[c00 + f]) * (1.0 - ty)
                        + (self.tables[c11 + f] - self.tables[c01 + f]) * ty;
                    let dv_dty = (self.tables[c01 + f] - self.tables[c00 + f]) * (1.0 - tx)
                        + (self.tables[c11 + f] - self.tables[c10 + f]) * tx;
                    if !u_clamped {
                        d_pos[ax] += g * dv_dtx * n / ext_u;
                    }
                    if !v_clamped {
                        d_pos[ay] += g * dv_dty * n / ext_v;
                    }
                }
            }
        }
    }

    /// Discrete interpolation-cell signature at `pos`, for FD exclusion.
    pub fn cell_signature(&self, pos: &Vector3<f64>) -> u64 {
        let mut sig = 0xcbf29ce484222325u64;
        for &(ax, ay) in &PLANE_AXES {
            let (u, uc, _) = self.normalize(pos, ax);
            let (v, vc, _) = self.normalize(pos, ay);
            for level in 0..self.levels {
                let n = self.resolutions[level] as f64;
                let i0 = ((u * n).floor()).min(n - 1.0).max(0.0) as u64;
                let j0 = ((v * n).floor()).min(n - 1.0).max(0.0) as u64;
                for val in [i0, j0, uc as u64, vc as u64] {
                    sig ^= val.wrapping_add(0x9e3779b97f4a7c15);
                    sig = sig.wrapping_mul(0x100000001b3);
                }
            }
        }
        sig
    }
}
