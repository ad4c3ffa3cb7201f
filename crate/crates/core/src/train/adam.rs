//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[&Parameter]) -> Adam {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one update from the gradients currently held by `params`.
    /// A parameter without a gradient is treated as having a zero one.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, mut params: Vec<&mut Parameter>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!("optimizer built for {} parameters, got {}", self.m.len(), params.len())));
        }
        let grads: Vec<Option<Vec<Real>>> = params.iter().map(|p| p.grad()).collect();
        for (p, g) in params.iter().zip(&grads) {
            if let Some(i) = g.as_ref().and_then(|g| g.iter().position(|x| !x.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of {} at index {i}", p.name())));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let zeros;
            let g = match &grads[k] {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; p.numel()];
                    &zeros
                }
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                let gi = g[i] as f64;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                data[i] = (data[i] as f64 - update) as Real;
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}
