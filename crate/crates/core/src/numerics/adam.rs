use super::Parameterized;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    /// Rebuild from saved moments.
    pub fn from_state(config: AdamConfig, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self> {
        check_dim("Adam::from_state", m.len(), v.len())?;
        Ok(Self { config, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One descent step on a flat slice.
    pub fn update_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("Adam params", self.m.len(), params.len())?;
        self.apply(std::iter::once(params), grads)
    }

    /// One descent step on every tensor of `model`, with `grads` in flat order.
    pub fn update<P: Parameterized + ?Sized>(&mut self, model: &mut P, grads: &[f64]) -> Result<()> {
        check_dim("Adam params", self.m.len(), model.num_params())?;
        self.apply(model.tensors_mut().into_iter(), grads)
    }

    fn apply<'a>(&mut self, tensors: impl Iterator<Item = &'a mut [f64]>, grads: &[f64]) -> Result<()> {
        check_dim("Adam grads", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient passed to Adam".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0;
        for tensor in tensors {
            for p in tensor.iter_mut() {
                let g = grads[k];
                self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                let m_hat = self.m[k] / bc1;
                let v_hat = self.v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                k += 1;
            }
        }
        Ok(())
    }
}
