//! Hand-rolled linear layers and a small MLP with analytic backward passes.
//!
//! 1×1 convolutions over per-point feature channels are exactly shared
//! linear layers applied per point, so that is what lives here. The
//! MLP nonlinearity is x·sigmoid(x), smooth everywhere, which keeps the
//! finite-difference suites clean of activation kinks.

use rand::Rng;

use crate::gsmath::sigmoid;

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Dense layer y = W x + b, weights row-major `out_dim × in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform init in ±1/√in_dim.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64], y: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        y.clear();
        y.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            y.push(acc);
        }
    }

    /// Accumulates dL/dW, dL/db into `grads` and dL/dx into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.out_dim);
        debug_assert_eq!(dx.len(), self.in_dim);
        for o in 0..self.out_dim {
            let g = dy[o];
            grads.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn collect_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    /// Reads parameters back from the front of `src`, advancing it.
    pub fn assign_params(&mut self, src: &mut &[f64]) {
        let (w, rest) = src.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        *src = rest;
    }

    pub fn scale(&mut self, f: f64) {
        for w in &mut self.weight {
            *w *= f;
        }
        for b in &mut self.bias {
            *b *= f;
        }
    }
}

/// MLP with silu between layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Saved forward state for one MLP evaluation.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each non-final layer.
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims` lists layer sizes input-to-output, e.g. `[in, 64, 64, out]`.
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::random(w[0], w[1], rng))
                .collect(),
        }
    }

    /// Zero the final layer so an untrained head predicts exactly zero.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("mlp has layers");
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.inputs.clear();
        cache.pre.clear();
        let mut cur = x.to_vec();
        let mut buf = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(cur.clone());
            layer.forward(&cur, &mut buf);
            if li + 1 < self.layers.len() {
                cache.pre.push(buf.clone());
                cur.clear();
                cur.extend(buf.iter().map(|&v| silu(v)));
            } else {
                cur = buf.clone();
            }
        }
        cur
    }

    /// Returns dL/dx; accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut dcur = dy.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li + 1 < self.layers.len() {
                let pre = &cache.pre[li];
                for (d, &p) in dcur.iter_mut().zip(pre) {
                    *d *= silu_prime(p);
                }
            }
            let mut dx = vec![0.0; layer.in_dim];
            layer.backward(&cache.inputs[li], &dcur, &mut grads.layers[li], &mut dx);
            dcur = dx;
        }
        dcur
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn collect_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.collect_params(out);
        }
    }

    pub fn assign_params(&mut self, src: &mut &[f64]) {
        for l in &mut self.layers {
            l.assign_params(src);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, FD_STEP, FD_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::random(&[5, 8, 8, 3], &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cache = MlpCache::default();
        let mut grads = mlp.zeros_like();
        mlp.forward(&x, &mut cache);
        let dx = mlp.backward(&cache, &dy, &mut grads);

        let mut flat = Vec::new();
        grads.collect_params(&mut flat);
        let mut theta = Vec::new();
        mlp.collect_params(&mut theta);

        let f = |p: &[f64]| {
            let mut net = mlp.clone();
            let mut src = p;
            net.assign_params(&mut src);
            let mut c = MlpCache::default();
            let y = net.forward(&x, &mut c);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let rep = check_gradient("mlp-params", &f, &|_| 0, &theta, &flat, FD_STEP, 1e-7);
        assert!(rep.passes(FD_TOL), "{rep}");

        let fx = |xx: &[f64]| {
            let mut c = MlpCache::default();
            let y = mlp.forward(xx, &mut c);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        let rep = check_gradient("mlp-input", &fx, &|_| 0, &x, &dx, FD_STEP, 1e-7);
        assert!(rep.passes(FD_TOL), "{rep}");
    }
}
