use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// One bias-corrected Adam update over all trainable entries, then zeroes gradients.
///
/// Fails without touching any value if a gradient is non-finite.
pub fn adam_step(params: &mut ParameterStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    for (name, p) in params.iter() {
        if p.trainable && !p.grad.is_finite() {
            return Err(Error::Training(format!("non-finite gradient for parameter `{name}`")));
        }
    }
    params.step_count += 1;
    let t = params.step_count as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    for (_, p) in params.iter_mut() {
        if !p.trainable {
            p.grad.fill(0.0);
            continue;
        }
        let g = p.grad.as_slice();
        let m = p.m.as_mut_slice();
        let v = p.v.as_mut_slice();
        let w = p.value.as_mut_slice();
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

impl AdamConfig {
    pub fn step(&self, params: &mut ParameterStore) -> Result<()> {
        adam_step(params, self.lr, self.beta1, self.beta2, self.eps)
    }

    pub fn step_with_lr(&self, params: &mut ParameterStore, lr: f64) -> Result<()> {
        adam_step(params, lr, self.beta1, self.beta2, self.eps)
    }
}
