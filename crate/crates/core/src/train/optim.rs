//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("betas must lie in [0,1) and eps must be positive".into()));
        }
        Ok(())
    }
}

/// Moments are kept in `f64` and exist only for trainable parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new<T: Scalar>(cfg: AdamWConfig, store: &ParamStore<T>) -> Self {
        let moments = store
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(id, p)| (id, (vec![0.0; p.tensor.len()], vec![0.0; p.tensor.len()])))
            .collect();
        Self { cfg, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of parameters holding optimizer state.
    pub fn state_len(&self) -> usize {
        self.moments.len()
    }

    pub fn has_state(&self, id: ParamId) -> bool {
        self.moments.contains_key(&id)
    }

    /// Applies one update. A gradient for a frozen parameter is an invariant
    /// breach and leaves the store untouched. Parameters without a gradient
    /// (unrouted experts) are skipped, moments and decay included.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            let p = store.get(id);
            if p.frozen || !self.moments.contains_key(&id) {
                return Err(Error::Invariant(format!("gradient present for frozen parameter `{}`", p.name)));
            }
            if g.shape() != p.tensor.shape() {
                return Err(Error::Invariant(format!("gradient shape {:?} for `{}` {:?}", g.shape(), p.name, p.tensor.shape())));
            }
        }
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let decay = 1.0 - c.lr * c.weight_decay;
        for (&id, (m, v)) in self.moments.iter_mut() {
            let Some(grad) = grads.param(id) else { continue };
            let data = store.get_mut(id).tensor.data_mut();
            for (i, x) in data.iter_mut().enumerate() {
                let gi = grad.data()[i].to_f64c();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = x.to_f64c() * decay;
                *x = T::from_f64c(w - c.lr * mhat / (vhat.sqrt() + c.eps));
            }
        }
        Ok(())
    }
}
