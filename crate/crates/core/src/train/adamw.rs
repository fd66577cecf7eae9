use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Real;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter. Step counts are kept per
/// parameter so that a tensor unfrozen late starts its bias correction
/// from its own first update.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: Vec<u64>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        OptimizerState {
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: alloc::vec![0; store.len()],
        }
    }
}

/// One decoupled-weight-decay Adam update of every trainable parameter:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`. Frozen parameters and their moments
/// are left untouched.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, cfg: &AdamWConfig) {
    let (b1, b2, lr, eps, wd) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps, cfg.weight_decay);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        state.t[i] += 1;
        let t = state.t[i] as f64;
        let c1 = 1.0 - libm::pow(b1, t);
        let c2 = 1.0 - libm::pow(b2, t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as Real;
            v[j] = vj as Real;
            let th = *theta as f64;
            *theta = (th - lr * (mj / c1) / (libm::sqrt(vj / c2) + eps) - lr * wd * th) as Real;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_null_update() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(&[3], alloc::vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut st = OptimizerState::new(&store);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &mut st, &cfg);
        assert_eq!(store.iter().next().unwrap().value, before.iter().next().unwrap().value);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(0.0));
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut st = OptimizerState::new(&store);
        let cfg = AdamWConfig {
            lr: 1e-3,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &mut st, &cfg);
        let d = store.get(id).value.data()[0] as f64;
        assert!((d - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-9);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("speech.w", Tensor::scalar(1.0));
        store.get_mut(id).grad = Tensor::scalar(1.0);
        store.get_mut(id).trainable = false;
        let mut st = OptimizerState::new(&store);
        adamw_step(&mut store, &mut st, &AdamWConfig::default());
        assert_eq!(store.get(id).value.data()[0], 1.0);
        assert_eq!(st.t[0], 0);
    }
}
