//! Minimal layers with hand-written backward passes.
//!
//! Sequences are `(T, D)` matrices and 2-D feature maps are channels-last
//! `(T, F, C)` arrays. Every layer caches what its backward pass needs during
//! `forward`; `backward` accumulates parameter gradients and returns the
//! gradient of its input.

mod conv;
mod gru;
mod linear;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use conv::{Conv2d, ConvBlock, ConvCache, FreqPool};
pub use gru::{BiGru, BiGruCache, Gru, GruCache};
pub use linear::Linear;

/// A trainable matrix and its accumulated gradient. Biases are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::new(Array2::from_shape_simple_fn((rows, cols), || d.sample(rng)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything holding named parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.value.len());
        n
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |name, p| {
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, p| s += p.grad.iter().map(|g| g * g).sum::<f64>());
        s.sqrt()
    }
}

/// Prefix `name` with `scope` joined by a dot.
pub fn scoped(scope: &str, name: &str) -> String {
    if scope.is_empty() {
        name.to_string()
    } else {
        format!("{scope}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over the parameters of one module, matched by visiting order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step(&mut self, module: &mut dyn Module) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut i = 0;
        let moments = &mut self.moments;
        module.visit_mut(&mut |_, p| {
            if moments.len() <= i {
                moments.push((
                    Array2::zeros(p.value.raw_dim()),
                    Array2::zeros(p.value.raw_dim()),
                ));
            }
            let (m, v) = &mut moments[i];
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(m)
                .and(v)
                .for_each(|w, g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * *g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * *g * *g;
                    *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    *g = 0.0;
                });
            i += 1;
        });
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::Module;

    /// Compare accumulated gradients of every parameter entry against
    /// central differences of `loss`. Returns the worst relative error.
    pub fn check_params<M: Module>(module: &mut M, loss: &dyn Fn(&M) -> f64, h: f64) -> f64 {
        let mut analytic = Vec::new();
        module.visit(&mut |_, p| analytic.extend(p.grad.iter().copied()));
        let mut coords = Vec::new();
        module.visit(&mut |_, p| coords.push(p.value.len()));
        let mut worst: f64 = 0.0;
        let mut flat = 0;
        for (pi, &n) in coords.iter().enumerate() {
            for j in 0..n {
                let shift = |m: &mut M, d: f64| {
                    let mut k = 0;
                    m.visit_mut(&mut |_, p| {
                        if k == pi {
                            let v = p.value.as_slice_mut().expect("contiguous");
                            v[j] += d;
                        }
                        k += 1;
                    });
                };
                shift(module, h);
                let up = loss(module);
                shift(module, -2.0 * h);
                let down = loss(module);
                shift(module, h);
                let num = (up - down) / (2.0 * h);
                let a = analytic[flat];
                worst = worst.max((a - num).abs() / num.abs().max(a.abs()).max(1e-3));
                flat += 1;
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quad {
        w: Param,
    }

    impl Module for Quad {
        fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
            f("w", &self.w)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("w", &mut self.w)
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = Quad {
            w: Param::uniform(2, 3, 1.0, &mut rng),
        };
        let mut opt = Adam::new(AdamConfig::with_lr(0.05));
        for _ in 0..500 {
            q.w.grad = q.w.value.mapv(|v| 2.0 * (v - 0.5));
            opt.step(&mut q);
        }
        assert!(q.w.value.iter().all(|v| (v - 0.5).abs() < 1e-3));
        assert!(q.w.grad.iter().all(|g| *g == 0.0));
        assert_eq!(opt.steps(), 500);
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut q = Quad {
            w: Param::zeros(1, 2),
        };
        q.w.grad = ndarray::array![[3.0, -0.1]];
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3));
        opt.step(&mut q);
        assert!((q.w.value[[0, 0]] + 1e-3).abs() < 1e-9);
        assert!((q.w.value[[0, 1]] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn hash_tracks_values() {
        let mut q = Quad {
            w: Param::zeros(2, 2),
        };
        let h0 = q.param_hash();
        assert_eq!(h0, q.param_hash());
        q.w.grad.fill(1.0);
        assert_eq!(h0, q.param_hash());
        q.w.value[[1, 1]] = 1e-12;
        assert_ne!(h0, q.param_hash());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
