use super::{ParamStore, Scalar, Tensor};
use crate::error::{DlgError, Result};

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

/// One bias-corrected Adam step on a flat buffer. `step` is 1-based.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [Scalar],
    grad: &[Scalar],
    m: &mut [Scalar],
    v: &mut [Scalar],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i] as f64;
        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = mi as Scalar;
        v[i] = vi as Scalar;
        let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        param[i] = (param[i] as f64 - update) as Scalar;
    }
}

/// Adam with per-parameter moment buffers, zero-initialized.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Apply one update with learning rate `lr`; parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(DlgError::invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        for (i, p) in store.iter_mut().enumerate() {
            let zero;
            let grad = match &p.grad {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0 as Scalar; p.value.numel()];
                    &zero
                }
            };
            adam_update(
                p.value.data_mut(),
                grad,
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                lr,
                beta1,
                beta2,
                eps,
                self.step,
            );
        }
        Ok(())
    }
}
