//! AdamW with decoupled weight decay, and the warmup/linear-decay schedule.

use alloc::vec::Vec;

use crate::graph::Gradients;
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update at learning rate `lr`. Parameters without a gradient still
    /// take their decay and moment updates, as with a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Parameter("optimizer built for a different parameter set".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let decay = params.get(id).decay;
            let grad = grads.param(id);
            if let Some(g) = grad {
                if g.shape() != params.value(id).shape() {
                    return Err(Error::shape("adamw", params.value(id).shape(), g.shape()));
                }
            }
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = params.value_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = grad.map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                if decay {
                    p[j] -= lr * self.weight_decay * p[j];
                }
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over the first `warmup_prop * total`
/// steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, peak: f64, warmup_prop: f64) -> f64 {
    let warmup = (warmup_prop * total as f64) as usize;
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if step >= total {
        0.0
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    }
}
