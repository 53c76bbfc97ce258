use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// `v = momentum * v + g; w -= lr * v`
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `s = alpha * s + (1 - alpha) * g^2; w -= lr * g / (sqrt(s) + eps)`
    RmsProp { alpha: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            alpha: 0.99,
            eps: 1e-8,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            OptimizerKind::SgdMomentum { .. } => 0,
            OptimizerKind::Adam { .. } => 1,
            OptimizerKind::RmsProp { .. } => 2,
        }
    }
}

/// Optimizer hyper-parameters plus per-parameter accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[&Tensor]) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        let zeros = |p: &&Tensor| Tensor::zeros(p.shape());
        let first = params.iter().map(zeros).collect();
        let second = match kind {
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
            _ => params.iter().map(zeros).collect(),
        };
        Ok(Self {
            kind,
            lr,
            first,
            second,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accumulator_shapes(&self) -> Vec<Vec<usize>> {
        self.first.iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Apply one update to `params` given matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.first.len()],
                found: vec![params.len(), grads.len()],
            });
        }
        for ((p, g), acc) in params.iter().zip(grads).zip(&self.first) {
            p.same_shape(g)?;
            acc.same_shape(p)?;
        }
        self.steps += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let p = p.as_mut_slice();
                    for ((w, gi), vi) in p.iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
                        *vi = momentum * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice());
                    for (((w, gi), mi), vi) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { alpha, eps } => {
                for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(s.as_mut_slice());
                    for ((w, gi), si) in it {
                        *si = alpha * *si + (1.0 - alpha) * gi * gi;
                        *w -= lr * gi / (si.sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("optimizer step".into()));
        }
        Ok(())
    }
}
