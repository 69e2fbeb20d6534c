//! Adam with exponential learning-rate decay.

use crate::error::{Result, SvsError};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Multiplicative decay applied per `decay_interval` steps.
    pub decay_rate: f64,
    pub decay_interval: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, decay_rate: f64, decay_interval: u64) -> Self {
        AdamConfig {
            base_lr,
            decay_rate,
            decay_interval,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Constant learning rate (baseline model).
    pub fn constant(lr: f64) -> Self {
        AdamConfig::new(lr, 1.0, 1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            cfg,
            step_count: 0,
            first_moment: m,
            second_moment: v,
        }
    }

    /// base_lr * decay^(step/interval), smooth in the step count.
    pub fn effective_lr(&self) -> f64 {
        let e = self.step_count as f64 / self.cfg.decay_interval as f64;
        self.cfg.base_lr * self.cfg.decay_rate.powf(e)
    }

    /// One Adam update over every parameter in the store. `grads` is indexed
    /// like the store; missing entries mean zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        for (i, (name, _)) in store.iter().enumerate() {
            if !grads[i].is_finite() {
                return Err(SvsError::Numeric(format!(
                    "non-finite gradient for parameter '{}'",
                    name
                )));
            }
        }
        let lr = self.effective_lr();
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let p = store.value_mut(i);
            for ((pv, (mv, vv)), gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                .zip(g.data())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
