//! Fully connected layers and activation primitives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::matrix::{Matrix, Param};
use crate::num::tape::{Tape, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Rectifier,
    Logistic,
}

/// Apply an activation to a plain vector, without recording on a tape.
pub fn activation_apply(kind: Activation, x: &[f64]) -> Vec<f64> {
    match kind {
        Activation::None => x.to_vec(),
        Activation::Rectifier => x.iter().map(|v| v.max(0.0)).collect(),
        Activation::Logistic => x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}

/// One dense layer: `y = activation(W x + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Param,
    pub bias: Param,
    pub activation: Activation,
}

/// Tape handles for a bound [`DenseLayer`].
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weights: VarId,
    pub bias: VarId,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Matrix, activation: Activation) -> Result<Self> {
        if bias.rows() != weights.rows() || bias.cols() != 1 {
            return Err(Error::Shape(format!(
                "bias {}x{} does not match weight rows {}",
                bias.rows(),
                bias.cols(),
                weights.rows()
            )));
        }
        Ok(DenseLayer {
            weights: Param::new(weights),
            bias: Param::new(bias),
            activation,
        })
    }

    /// Uniform init in (-sqrt(6 / fan_in), +sqrt(6 / fan_in)). Biases start
    /// at a small positive constant: rectifier stacks this narrow go fully
    /// dead surprisingly often with zero bias, which both stalls training
    /// and parks downstream pre-activations exactly on the rectifier kink.
    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim.max(1) as f64).sqrt();
        let data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let mut bias = Matrix::zeros(out_dim, 1);
        bias.fill(0.1);
        DenseLayer {
            weights: Param::new(Matrix::new(out_dim, in_dim, data).expect("finite init")),
            bias: Param::new(bias),
            activation,
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Param::new(Matrix::zeros(out_dim, in_dim)),
            bias: Param::new(Matrix::zeros(out_dim, 1)),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.value.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.value.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weights: tape.param(&self.weights),
            bias: tape.param(&self.bias),
        }
    }

    pub fn accumulate(&mut self, tape: &Tape, vars: DenseVars) {
        tape.accumulate_grad(vars.weights, &mut self.weights);
        tape.accumulate_grad(vars.bias, &mut self.bias);
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }
}

/// Forward pass of a dense layer on the tape; gradients for the weights,
/// bias, and input flow back through the recorded nodes.
pub fn dense_apply(
    tape: &mut Tape,
    layer: &DenseLayer,
    vars: DenseVars,
    x: VarId,
) -> Result<VarId> {
    let (n, c) = tape.shape(x);
    if c != 1 || n != layer.in_dim() {
        return Err(Error::Shape(format!(
            "dense layer expects input of length {}, got {n}x{c}",
            layer.in_dim()
        )));
    }
    let wx = tape.matvec(vars.weights, x)?;
    let pre = tape.add(wx, vars.bias)?;
    Ok(match layer.activation {
        Activation::None => pre,
        Activation::Rectifier => tape.relu(pre),
        Activation::Logistic => tape.logistic(pre),
    })
}

/// A sequence of dense layers applied in order.
#[derive(Debug, Clone)]
pub struct DenseStack {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct DenseStackVars {
    pub layers: Vec<DenseVars>,
}

impl DenseStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Shape(format!(
                    "stack widths disagree: {} feeds {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(DenseStack { layers })
    }

    /// Rectifier on every layer except the last, which stays linear.
    pub fn init_mlp<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::new();
        for i in 1..widths.len() {
            let act = if i + 1 < widths.len() {
                Activation::Rectifier
            } else {
                Activation::None
            };
            layers.push(DenseLayer::init(widths[i], widths[i - 1], act, rng));
        }
        DenseStack { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim()).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseStackVars {
        DenseStackVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    pub fn accumulate(&mut self, tape: &Tape, vars: &DenseStackVars) {
        for (layer, v) in self.layers.iter_mut().zip(&vars.layers) {
            layer.accumulate(tape, *v);
        }
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &DenseStackVars, x: VarId) -> Result<VarId> {
        let mut cur = x;
        for (layer, v) in self.layers.iter().zip(&vars.layers) {
            cur = dense_apply(tape, layer, *v, cur)?;
        }
        Ok(cur)
    }
}
