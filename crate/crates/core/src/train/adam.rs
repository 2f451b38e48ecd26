//! Adam with bias correction and no weight decay.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::models::{OptimizerState, ParamStore};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every variable of `store` that has a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in store.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let g = &g;
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let g2 = g.sqr()?;
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g2 * (1.0 - self.beta2))?)?,
                None => (g2 * (1.0 - self.beta2))?,
            };
            let update = ((&m / c1)? / ((&v / c2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    pub fn state(&self) -> OptimizerState {
        let mut tensors = BTreeMap::new();
        for (k, t) in &self.m {
            tensors.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            tensors.insert(format!("v.{k}"), t.clone());
        }
        OptimizerState {
            step: self.step,
            tensors,
        }
    }

    pub fn load_state(&mut self, state: &OptimizerState, store: &ParamStore) -> Result<()> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (k, t) in &state.tensors {
            let (slot, name) = k
                .split_once('.')
                .ok_or_else(|| Error::Format(format!("bad optimizer entry {k}")))?;
            let var = store
                .get(name)
                .ok_or_else(|| Error::Format(format!("optimizer state for unknown weight {name}")))?;
            if var.dims() != t.dims() {
                return Err(Error::Format(format!("optimizer state {k} has wrong shape")));
            }
            let t = t.to_dtype(store.dtype())?;
            match slot {
                "m" => m.insert(name.to_string(), t),
                "v" => v.insert(name.to_string(), t),
                _ => return Err(Error::Format(format!("bad optimizer entry {k}"))),
            };
        }
        self.step = state.step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
