use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::trainer::xavier_init;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// One affine layer: `weight` is `out x in`, `bias` has `out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Fully connected network with the same activation after every hidden
/// layer and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    /// Xavier-normal weights, zero biases. `widths` lists every layer width
    /// from input to output, so `[d, 200, 200, K]` is a 3-layer network.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Linear { weight: xavier_init(w[1], w[0], rng), bias: Tensor::zeros(vec![w[1]]) })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Linear { weight: Tensor::zeros(vec![w[1], w[0]]), bias: Tensor::zeros(vec![w[1]]) })
            .collect();
        Ok(Mlp { layers, activation })
    }

    /// Rebuilds a network from flat parameter tensors in `params()` order.
    pub fn from_params(activation: Activation, params: Vec<Tensor>) -> Result<Self> {
        if params.is_empty() || !params.len().is_multiple_of(2) {
            return Err(Error::InvalidShape(format!("mlp needs weight/bias pairs, got {} tensors", params.len())));
        }
        let mut layers = Vec::with_capacity(params.len() / 2);
        let mut it = params.into_iter();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            let [o, i] = weight.shape() else {
                return Err(Error::InvalidShape("weight must be a matrix".into()));
            };
            if bias.shape() != [*o] {
                return Err(Error::InvalidShape(format!("bias {:?} for {o}x{i} weight", bias.shape())));
            }
            if let Some(prev) = layers.last() {
                let prev: &Linear = prev;
                if prev.weight.shape()[0] != *i {
                    return Err(Error::InvalidShape("consecutive layers do not chain".into()));
                }
            }
            layers.push(Linear { weight, bias });
        }
        Ok(Mlp { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.shape()[0]).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weight.shape()[0]));
        w
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|t| t.all_finite())
    }

    /// All parameters concatenated in `params()` order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidShape(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut rest = flat;
        for t in self.params_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Records the parameters on `tape`; `track` decides whether they
    /// receive gradients.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Result<BoundMlp> {
        let mut vars = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (o, i) = (l.weight.shape()[0], l.weight.shape()[1]);
            let (w, b) = if track {
                (tape.variable(o, i, l.weight.data().to_vec())?, tape.variable(1, o, l.bias.data().to_vec())?)
            } else {
                (tape.constant(o, i, l.weight.data().to_vec())?, tape.constant(1, o, l.bias.data().to_vec())?)
            };
            vars.push((w, b));
        }
        Ok(BoundMlp { vars, activation: self.activation })
    }

    /// Forward pass on a batch `n x in` without recording gradients.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let xv = tape.constant(rows, self.input_dim(), x.to_vec())?;
        let y = bound.forward(&mut tape, xv)?;
        Ok(tape.value(y)?.to_vec())
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidShape(format!("invalid layer widths {widths:?}")));
    }
    Ok(())
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.vars.len() - 1;
        for (k, &(w, b)) in self.vars.iter().enumerate() {
            h = tape.affine(h, w, Some(b))?;
            if k < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Gradients in `Mlp::params()` order; zeros for untouched parameters.
    pub fn grads(&self, tape: &Tape) -> Result<ParamGrads> {
        let mut out = Vec::with_capacity(self.vars.len() * 2);
        for &(w, b) in &self.vars {
            out.push(tape.grad_or_zeros(w)?);
            out.push(tape.grad_or_zeros(b)?);
        }
        Ok(ParamGrads(out))
    }
}

/// Gradients for one network, aligned with `Mlp::params()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        ParamGrads(net.params().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, c: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}
