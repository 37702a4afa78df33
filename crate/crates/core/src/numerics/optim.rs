//! Adam with decoupled weight decay and a warmup / linear-decay learning rate.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{bail_input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr_peak: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 10_000,
            total_steps: 1_000_000,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail_input!("betas must lie in [0, 1), got {} / {}", self.beta1, self.beta2);
        }
        if self.epsilon <= 0.0 {
            bail_input!("epsilon must be positive");
        }
        if self.weight_decay < 0.0 || self.lr_peak < 0.0 {
            bail_input!("lr and weight decay must be non-negative");
        }
        if self.warmup_steps > self.total_steps {
            bail_input!("warmup {} exceeds total steps {}", self.warmup_steps, self.total_steps);
        }
        Ok(())
    }
}

/// Learning rate at a step, with a flag set when the step ran past the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledLr {
    pub lr: f64,
    pub past_end: bool,
}

/// Linear 0 → peak over the warmup, then linear peak → 0 at `total_steps`.
pub fn lr_at(step: u64, hyper: &AdamHyper) -> ScheduledLr {
    let AdamHyper { lr_peak, warmup_steps, total_steps, .. } = *hyper;
    if step > total_steps {
        return ScheduledLr { lr: 0.0, past_end: true };
    }
    let lr = if step < warmup_steps {
        lr_peak * (step as f64 / warmup_steps as f64)
    } else if total_steps == warmup_steps {
        lr_peak
    } else {
        lr_peak * ((total_steps - step) as f64 / (total_steps - warmup_steps) as f64)
    };
    ScheduledLr { lr, past_end: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub hyper: AdamHyper,
    /// Indexed by parameter id; allocated lazily, zero at first touch.
    pub moments: Vec<Option<Moments>>,
}

impl OptimizerState {
    pub fn new(hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self { step: 0, hyper, moments: Vec::new() })
    }

    pub fn scheduled_lr(&self) -> ScheduledLr {
        lr_at(self.step, &self.hyper)
    }
}

/// One Adam update of `ids` at learning rate `lr`, then advances the step
/// counter. Every listed parameter must carry a gradient.
///
/// Update per element: `p -= lr * (m̂ / (sqrt(v̂) + ε) + wd * p)`, with decay
/// skipped for parameters flagged exempt.
pub fn adam_step(store: &mut ParamStore, ids: &[ParamId], state: &mut OptimizerState, lr: f64) -> Result<()> {
    for &id in ids {
        if store.get(id).tensor.grad().is_none() {
            return Err(Error::MissingGrad(store.get(id).name.clone()));
        }
    }
    if state.moments.len() < store.len() {
        state.moments.resize(store.len(), None);
    }
    let t = (state.step + 1) as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for &id in ids {
        let param = store.get_mut(id);
        let wd = if param.decay { h.weight_decay } else { 0.0 };
        let n = param.tensor.numel();
        let mom = state.moments[id.0].get_or_insert_with(|| Moments { first: vec![0.0; n], second: vec![0.0; n] });
        let grad = param.tensor.grad().expect("checked above").to_vec();
        let data = param.tensor.data_mut();
        for i in 0..n {
            let g = grad[i];
            mom.first[i] = h.beta1 * mom.first[i] + (1.0 - h.beta1) * g;
            mom.second[i] = h.beta2 * mom.second[i] + (1.0 - h.beta2) * g * g;
            let m_hat = mom.first[i] / bc1;
            let v_hat = mom.second[i] / bc2;
            data[i] -= lr * (m_hat / (v_hat.sqrt() + h.epsilon) + wd * data[i]);
        }
    }
    state.step += 1;
    Ok(())
}
