//! Adam with bias correction. Moment buffers are positional: the caller must
//! pass parameters and gradients in the same order every step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::Parameter(format!("adam: lr must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Parameter(format!(
                "adam: betas must be in [0,1), got {beta1}, {beta2}"
            )));
        }
        Ok(Self { lr, beta1, beta2, eps, step_count: 0, slots: Vec::new() })
    }

    /// Default betas 0.9/0.999, eps 1e-8.
    pub fn with_lr(lr: f64) -> Result<Self> {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameters. Moment buffers are allocated on the
    /// first call and must keep matching shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot { m: vec![0.0; p.numel()], v: vec![0.0; p.numel()] })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::Contract("adam: parameter count changed between steps".into()));
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            if p.numel() != g.len() || p.numel() != slot.m.len() {
                return Err(Error::Contract(format!(
                    "adam: buffer sizes disagree ({} param, {} grad, {} moment)",
                    p.numel(),
                    g.len(),
                    slot.m.len()
                )));
            }
            let data = p.data_mut();
            for i in 0..data.len() {
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g[i];
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
