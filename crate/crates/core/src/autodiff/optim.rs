use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::Params;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one [`Params`] set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &Params<f32>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the step
    /// before anything is modified.
    pub fn step(&mut self, params: &mut Params<f32>, grads: &[Tensor<f32>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam: gradient/parameter count mismatch"));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "adam: gradient shape {:?} for {name} does not match {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {name}")));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = flush(b1 * m[j] + (1.0 - b1) * g[j]);
                v[j] = flush(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
                let m_hat = f64::from(m[j]) / c1;
                let v_hat = f64::from(v[j]) / c2;
                *w -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Decaying moments otherwise drift into the (slow) subnormal range.
#[inline]
fn flush(x: f32) -> f32 {
    if x.is_normal() {
        x
    } else {
        0.0
    }
}
