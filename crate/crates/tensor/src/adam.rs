//! Adam with decoupled weight decay.

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 4e-4 }
    }
}

/// Moment buffers and per-parameter step counts. A parameter that is
/// skipped (frozen) keeps its step count, so its bias correction starts
/// fresh when it first trains.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let first: Vec<Vec<f32>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self { config, second: first.clone(), steps: vec![0; first.len()], first }
    }

    /// Updates every parameter accepted by `trainable`, then clears all
    /// gradients. A trainable parameter without a gradient is an error.
    pub fn step(&mut self, params: &mut ParamStore, trainable: impl Fn(ParamId) -> bool) -> Result<()> {
        let c = self.config;
        let ids: Vec<ParamId> = params.ids().filter(|id| trainable(*id)).collect();
        for &id in &ids {
            if params.get(id).grad().is_none() {
                return Err(TensorError::Contract(format!("parameter {} has no gradient", params.name(id))));
            }
        }
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let (lr, eps, wd) = (c.lr as f32, c.eps as f32, c.weight_decay as f32);
        for id in ids {
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - b1.powi(t);
            let bc2 = 1.0 - b2.powi(t);
            let p = params.get_mut(id);
            let grad = p.take_grad().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w -= lr * wd * *w;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
