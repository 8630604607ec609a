use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &ParamStore) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter for which `frozen` is false.
    /// Non-finite gradients are rejected before anything is modified.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &ParamStore,
        frozen: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if frozen(name) {
                continue;
            }
            let g = grads.get(name)?;
            let m = self.first.get_mut(name)?;
            let v = self.second.get_mut(name)?;
            let (pm, mm, vm, gm) = (
                p.as_mut_slice(),
                m.as_mut_slice(),
                v.as_mut_slice(),
                g.as_slice(),
            );
            for i in 0..pm.len() {
                mm[i] = self.beta1 * mm[i] + (1.0 - self.beta1) * gm[i];
                vm[i] = self.beta2 * vm[i] + (1.0 - self.beta2) * gm[i] * gm[i];
                let mhat = mm[i] / c1;
                let vhat = vm[i] / c2;
                pm[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.flatten().iter().map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for x in g.as_mut_slice() {
                *x *= s;
            }
        }
    }
    norm
}
