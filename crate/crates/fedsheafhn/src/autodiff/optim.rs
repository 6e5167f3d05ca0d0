//! Plain SGD and Adam over flat parameter lists.
//!
//! State is keyed by parameter position, so callers must pass the same
//! parameter slots in the same order on every step.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient (`g + weight_decay * p`).
    pub weight_decay: f64,
    pub state: Option<AdamState>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            state: None,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            lr,
            ..Optimizer::sgd(lr)
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::sgd(lr),
            OptimizerKind::Adam => Optimizer::adam(lr),
        }
    }

    /// Apply one descent step. `params` and `grads` must align.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "optimizer step: {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if wd == 0.0 {
                        p.axpy(-self.lr, g);
                    } else {
                        for (pi, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                            *pi -= self.lr * (gi + wd * *pi);
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let state = self.state.get_or_insert_with(|| AdamState {
                    t: 0,
                    m: grads.iter().map(|g| Tensor::zeros(g.shape())).collect(),
                    v: grads.iter().map(|g| Tensor::zeros(g.shape())).collect(),
                });
                state.t += 1;
                let bc1 = 1.0 - self.beta1.powi(state.t as i32);
                let bc2 = 1.0 - self.beta2.powi(state.t as i32);
                for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut state.m[slot];
                    let v = &mut state.v[slot];
                    for ((pi, &gi), (mi, vi)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        let gi = gi + wd * *pi;
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
