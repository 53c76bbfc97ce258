//! Fully connected layers with explicit forward caches and backward passes.

use serde::{Deserialize, Serialize};

use crate::numerics::{Rng, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let a = sigmoid(z);
                a * (1.0 - a)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Gaussian weights with variance `2 / inputs`, zero bias.
    pub fn he(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.normal() * std).collect();
        Self {
            weight: Tensor::new(vec![outputs, inputs], data).expect("shape is consistent"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Uniform weights in `[-scale, scale]`, zero bias.
    pub fn uniform(inputs: usize, outputs: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..inputs * outputs).map(|_| rng.uniform_in(-scale, scale)).collect();
        Self {
            weight: Tensor::new(vec![outputs, inputs], data).expect("shape is consistent"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.inputs();
        let w = self.weight.as_slice();
        for (o, (y, b)) in out.iter_mut().zip(self.bias.as_slice()).enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            *y = b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients and optionally write `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
        let n_in = self.inputs();
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let row = &mut gw[o * n_in..(o + 1) * n_in];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.weight.as_slice();
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (acc, wi) in dx.iter_mut().zip(row) {
                    *acc += d * wi;
                }
            }
        }
    }
}

/// Stack of dense layers: `hidden` activation between layers, `output` at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Activations recorded by [`Mlp::forward_trace`], consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input to each layer (after dropout for the last one).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    dropout: Option<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Mlp {
    /// He-initialised layers of the given widths, e.g. `[784, 128, 10]`.
    pub fn he(widths: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        let layers = widths.windows(2).map(|w| Dense::he(w[0], w[1], rng)).collect();
        Self { layers, hidden, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    /// Widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Dense::outputs));
        w
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.as_slice().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.num_params()],
                found: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input_dim()],
                found: vec![x.len()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x, None)?.output)
    }

    /// Forward pass keeping what the backward pass needs. `dropout`, if given,
    /// multiplies the input of the final layer elementwise.
    pub fn forward_trace(&self, x: &[f64], dropout: Option<Vec<f64>>) -> Result<Trace> {
        self.check_input(x)?;
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == depth;
            if last {
                if let Some(mask) = &dropout {
                    debug_assert_eq!(mask.len(), current.len());
                    current.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
                }
            }
            let mut z = vec![0.0; layer.outputs()];
            layer.forward(&current, &mut z);
            let act = if last { self.output } else { self.hidden };
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: current,
            dropout,
        })
    }

    /// Back-propagate `d_output` (gradient w.r.t. the activated output),
    /// accumulating into `grads` (same layout as [`Mlp::params`]). Returns
    /// the gradient w.r.t. the network input when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        d_output: &[f64],
        grads: &mut [Tensor],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let depth = self.layers.len();
        let mut delta: Vec<f64> = d_output
            .iter()
            .zip(&trace.pre[depth - 1])
            .map(|(d, &z)| d * self.output.derivative(z))
            .collect();
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let (gw, gb) = {
                let (left, right) = grads.split_at_mut(2 * i + 1);
                (left[2 * i].as_mut_slice(), right[0].as_mut_slice())
            };
            let need_dx = i > 0 || want_input_grad;
            let mut dx = vec![0.0; layer.inputs()];
            layer.backward(
                &trace.inputs[i],
                &delta,
                gw,
                gb,
                if need_dx { Some(&mut dx) } else { None },
            );
            if i == depth - 1 {
                if let Some(mask) = &trace.dropout {
                    dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                }
            }
            if i == 0 {
                return want_input_grad.then_some(dx);
            }
            delta = dx
                .iter()
                .zip(&trace.pre[i - 1])
                .map(|(d, &z)| d * self.hidden.derivative(z))
                .collect();
        }
        None
    }
}
