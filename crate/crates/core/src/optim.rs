//! SGD and AdamW parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

/// Per-parameter first/second moment buffers (AdamW only).
#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step_count: u64,
    moments: Vec<Moments>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::AdamW,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, model: &mut impl ParamSet) -> Result<()> {
        let mut params = model.params_mut();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.tensor.len()],
                    v: vec![0.0; p.tensor.len()],
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer state holds {} buffers but model has {} parameters",
                self.moments.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        for (p, mom) in params.iter_mut().zip(self.moments.iter_mut()) {
            let grad = p.tensor.grad.take().ok_or_else(|| {
                Error::contract(format!("optimizer step with missing grad for {}", p.name))
            })?;
            let values = p.tensor.values_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in values.iter_mut().zip(&grad) {
                        *w -= self.learning_rate * (g + self.weight_decay * *w);
                    }
                }
                OptimizerKind::AdamW => {
                    let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
                    let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
                    for ((w, &g), (m, v)) in values
                        .iter_mut()
                        .zip(&grad)
                        .zip(mom.m.iter_mut().zip(mom.v.iter_mut()))
                    {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.epsilon))
                            + self.learning_rate * self.weight_decay * *w;
                    }
                }
            }
        }
        Ok(())
    }
}
