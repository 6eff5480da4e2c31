//! Adam over named parameter stores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{GradMap, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and step counter for one player. A player may own several
/// stores (the discriminator and its classifier head); one `step` over
/// all of them advances `t` once.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    /// Zero moments shaped like every tensor in `stores`.
    pub fn new(config: AdamConfig, stores: &[&ParamStore]) -> Self {
        let zeros: BTreeMap<String, Tensor> = stores
            .iter()
            .flat_map(|s| s.iter())
            .map(|(k, t)| (k.clone(), t.map(|_| 0.0)))
            .collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of every parameter that has a gradient. Grads are checked
    /// in full before anything is modified.
    pub fn step(&mut self, stores: &mut [&mut ParamStore], grads: &GradMap) -> Result<()> {
        for (name, gr) in grads {
            let owner = stores.iter().find_map(|s| s.get(name));
            let Some(p) = owner else {
                return Err(Error::UnknownParameter(name.clone()));
            };
            let m = self.m.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.shape() != gr.shape() || m.shape() != gr.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().clone(),
                    right: gr.shape().clone(),
                });
            }
            if !gr.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for store in stores.iter_mut() {
            for (name, p) in store.iter_mut() {
                let Some(gr) = grads.get(name) else { continue };
                let m = self.m.get_mut(name).expect("checked above");
                let v = self.v.get_mut(name).expect("checked above");
                let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                for (i, &gi) in gr.data().iter().enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
