//! Adam over a [`ParamStore`]'s trainable parameters.
//!
//! Hand-rolled rather than taken from an optimizer crate so the moment
//! tensors can be checkpointed and restored exactly, which the resumable
//! training contract requires.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::checkpoint::OptimizerState;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct MomentSlot {
    name: String,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    cfg: AdamConfig,
    step: usize,
    slots: Vec<MomentSlot>,
}

impl Adam {
    /// Fresh optimizer with zero moments for every trainable parameter.
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Result<Self> {
        let mut slots = Vec::new();
        for entry in store.entries().iter().filter(|e| e.trainable) {
            let t = entry.var.as_tensor();
            slots.push(MomentSlot {
                name: entry.name.clone(),
                m: t.zeros_like()?,
                v: t.zeros_like()?,
            });
        }
        Ok(Adam {
            cfg,
            step: 0,
            slots,
        })
    }

    /// Rebuild from checkpointed moments, validating coverage and shapes.
    pub fn from_state(store: &ParamStore, cfg: AdamConfig, state: OptimizerState) -> Result<Self> {
        let mut adam = Adam::new(store, cfg)?;
        adam.step = state.step;
        for slot in &mut adam.slots {
            let m = state
                .first_moment
                .get(&slot.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing first moment for '{}'", slot.name)))?;
            let v = state
                .second_moment
                .get(&slot.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing second moment for '{}'", slot.name)))?;
            if m.dims() != slot.m.dims() || v.dims() != slot.v.dims() {
                return Err(Error::Checkpoint(format!("optimizer moment shape mismatch for '{}'", slot.name)));
            }
            slot.m = m.to_dtype(slot.m.dtype())?;
            slot.v = v.to_dtype(slot.v.dtype())?;
        }
        Ok(adam)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update. Parameters whose gradient is absent from `grads` are
    /// skipped, matching the usual deep-learning framework semantics.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for slot in &mut self.slots {
            let entry = store
                .get(&slot.name)
                .ok_or_else(|| Error::config(format!("optimizer slot '{}' not in store", slot.name)))?;
            let var = &entry.var;
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            slot.m = ((&slot.m * self.cfg.beta1)? + (grad * (1.0 - self.cfg.beta1))?)?;
            slot.v = ((&slot.v * self.cfg.beta2)? + (grad.sqr()? * (1.0 - self.cfg.beta2))?)?;
            let m_hat = (&slot.m / bc1)?;
            let v_hat = (&slot.v / bc2)?;
            let delta = (m_hat.div(&(v_hat.sqrt()? + self.cfg.eps)?)? * lr)?;
            var.set(&(var.as_tensor() - delta)?)?;
        }
        Ok(())
    }

    /// Snapshot for checkpointing.
    pub fn state(&self) -> OptimizerState {
        let mut first_moment = HashMap::new();
        let mut second_moment = HashMap::new();
        for slot in &self.slots {
            first_moment.insert(slot.name.clone(), slot.m.clone());
            second_moment.insert(slot.name.clone(), slot.v.clone());
        }
        OptimizerState {
            step: self.step,
            first_moment,
            second_moment,
        }
    }
}
