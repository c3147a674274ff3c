use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// First-moment decay ("momentum").
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with coupled L2 weight decay (`g + wd·θ` enters both moments).
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} grads / {} state for {} params", grads.len(), self.m.len(), store.len()),
            ));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let g = &grads[k];
            if g.shape() != p.shape() || self.m[k].shape() != p.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] + weight_decay * *w;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
