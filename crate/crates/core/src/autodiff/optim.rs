use rand::Rng;

use super::{GradientSet, ParamStore, Tensor};

/// Relative slack below which a norm counts as already clipped; a rescaled
/// set can measure a few ulps above `max_norm`, and re-clipping it must be a
/// no-op.
const CLIP_SLACK: f64 = 1e-12;

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm measured before scaling.
pub fn clip_global_norm(grads: &mut GradientSet, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm * (1.0 + CLIP_SLACK) {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every parameter. Missing gradients
    /// count as zero; parameters with `frozen[id] == true` are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradientSet, frozen: Option<&[bool]>) {
        assert_eq!(grads.len(), store.len(), "gradient set does not match store");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids() {
            if frozen.is_some_and(|f| f[id.0]) {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let param = store.get_mut(id).data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            match grads.get(id) {
                Some(g) => {
                    for (((p, mi), vi), gi) in param.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, mi), vi) in param.iter_mut().zip(m).zip(v) {
                        *mi *= beta1;
                        *vi *= beta2;
                        if *mi != 0.0 {
                            *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}
