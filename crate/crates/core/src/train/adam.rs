//! Bias-corrected Adam over a named parameter group.

use crate::error::{Error, Result};
use crate::models::WeightStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Moment estimates for one parameter group and its step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: WeightStore<f32>,
    pub v: WeightStore<f32>,
    pub t: u64,
}

impl AdamState {
    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a NaN leaves `params` and the state untouched.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut WeightStore<f32>, grads: &[(String, Tensor)]) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("`{name}`: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
        let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
        let step = (cfg.lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (name, g) in grads {
            let shape = g.shape();
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Tensor::zeros(shape));
                self.v.insert(name.clone(), Tensor::zeros(shape));
            }
            let m = self.m.get_mut(name)?.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = self.v.get_mut(name)?.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g.data()) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(name)?.data(), self.v.get(name)?.data());
            let p = params.get_mut(name)?.data_mut();
            for ((pi, &mi), &vi) in p.iter_mut().zip(m).zip(v) {
                *pi -= step * mi / (vi.sqrt() / bc2_sqrt + cfg.eps);
            }
        }
        Ok(())
    }
}
