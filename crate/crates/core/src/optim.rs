//! Gradient-descent parameter updates: plain SGD and bias-corrected Adam.
//!
//! An [`Optimizer`] owns per-parameter moment state shaped at construction time from the
//! parameter list it will drive. [`Optimizer::step`] requires every parameter to carry a
//! gradient, applies the update, and consumes the gradients (sets them back to `None`), so
//! accidentally stepping twice on one backward pass is an error rather than a silent
//! double update.

use crate::tensor::{Parameter, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl UpdateRule {
    /// Adam with the defaults used throughout the trainer: β₁ = 0.5, β₂ = 0.999, ε = 1e-8.
    pub fn adam_default() -> Self {
        UpdateRule::Adam { beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub rule: UpdateRule,
    pub lr: f64,
    /// first-moment buffers, one per parameter, shape-congruent
    m: Vec<Vec<f64>>,
    /// second-moment buffers, one per parameter, shape-congruent
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    /// `lr` must be non-negative; zero is legal and leaves parameters untouched.
    pub fn new(rule: UpdateRule, lr: f64, params: &[Parameter]) -> Self {
        assert!(lr >= 0.0 && lr.is_finite(), "learning rate must be finite and >= 0");
        let m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { rule, lr, m, v, t: 0 }
    }

    /// Apply one update using the gradient stored on each parameter, then clear it.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<(), TensorError> {
        assert_eq!(params.len(), self.m.len(), "optimizer drives a fixed parameter list");
        for p in params.iter() {
            if p.grad.is_none() {
                return Err(TensorError::MissingGrad { name: p.name.clone() });
            }
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().expect("checked above");
            match self.rule {
                UpdateRule::Sgd => {
                    for (w, gv) in p.data.iter_mut().zip(&g) {
                        *w -= self.lr * gv;
                    }
                }
                UpdateRule::Adam { beta1, beta2, epsilon } => {
                    let bc1 = 1.0 - beta1.powi(self.t as i32);
                    let bc2 = 1.0 - beta2.powi(self.t as i32);
                    for (j, (w, gv)) in p.data.iter_mut().zip(&g).enumerate() {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = beta1 * *m + (1.0 - beta1) * gv;
                        *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
