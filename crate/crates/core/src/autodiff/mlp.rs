//! Fully connected networks and their analytic input gradients.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{leaky, leaky_slope, NodeId, TapeGraph};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu => leaky(x, LEAKY_SLOPE),
            Activation::Identity => x,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::UnsupportedActivation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[in, out]`.
    pub weight: Tensor,
    /// `[1, out]`.
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Node ids recorded by [`Mlp::record`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: NodeId,
    pub weights: Vec<NodeId>,
    pub pre: Vec<NodeId>,
    pub post: Vec<NodeId>,
}

impl MlpTrace {
    pub fn output(&self) -> NodeId {
        *self.post.last().unwrap_or(&self.input)
    }
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization. `dims` lists every layer width
    /// including input and output.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        let mut draw = |fan_in: usize| (2.0 * rng.random::<f64>() - 1.0) / (fan_in as f64).sqrt();
        Self::build(dims, hidden, output, &mut draw)
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        Self::build(dims, hidden, output, &mut |_| 0.0)
    }

    fn build(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        init: &mut dyn FnMut(usize) -> f64,
    ) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let weight = Tensor::from_fn(fan_in, fan_out, |_, _| init(fan_in));
                let bias = Tensor::from_fn(1, fan_out, |_, _| init(fan_in));
                Layer {
                    weight,
                    bias,
                    activation: if l + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::output_dim));
        d
    }

    pub fn check(&self) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::shape(
                    "Mlp layers",
                    &w[0].weight.shape(),
                    &w[1].weight.shape(),
                ));
            }
        }
        for l in &self.layers {
            if l.bias.shape() != [1, l.output_dim()] {
                return Err(Error::shape("Mlp bias", &l.weight.shape(), &l.bias.shape()));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Data("non-finite network weights".into()));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Weights and biases interleaved: `w0, b0, w1, b1, ...`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, shape: [usize; 2]) -> Result<()> {
        if shape[1] != self.input_dim() {
            return Err(Error::shape("mlp_forward", &shape, &[self.input_dim()]));
        }
        Ok(())
    }

    /// Plain evaluation; same arithmetic as [`Mlp::record`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut h = x.clone();
        for l in &self.layers {
            let pre = h.matmul(&l.weight)?.add_row(&l.bias)?;
            h = match l.activation {
                Activation::Identity => pre,
                act => pre.map(|v| act.apply(v)),
            };
        }
        Ok(h)
    }

    /// Records the forward pass. `params` are this net's bound parameter ids in
    /// [`Mlp::parameters`] order.
    pub fn record(&self, tape: &mut TapeGraph, params: &[NodeId], x: NodeId) -> Result<MlpTrace> {
        self.check_input(tape.shape(x))?;
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "Mlp::record",
                &[2 * self.layers.len()],
                &[params.len()],
            ));
        }
        let mut trace = MlpTrace {
            input: x,
            weights: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x;
        for (l, p) in self.layers.iter().zip(params.chunks(2)) {
            let z = tape.matmul(h, p[0])?;
            let pre = tape.add_bias(z, p[1])?;
            h = match l.activation {
                Activation::Tanh => tape.tanh(pre),
                Activation::LeakyRelu => tape.leaky_relu(pre, LEAKY_SLOPE),
                Activation::Identity => pre,
            };
            trace.weights.push(p[0]);
            trace.pre.push(pre);
            trace.post.push(h);
        }
        Ok(trace)
    }

    /// Pulls `seed` (shaped like the output) back to the input as graph
    /// operations, so the result stays differentiable in the weights.
    pub fn record_backprop(
        &self,
        tape: &mut TapeGraph,
        trace: &MlpTrace,
        seed: NodeId,
    ) -> Result<NodeId> {
        let mut g = seed;
        for (k, l) in self.layers.iter().enumerate().rev() {
            g = match l.activation {
                Activation::Identity => g,
                Activation::Tanh => {
                    let sq = tape.square(trace.post[k]);
                    let neg = tape.scale(sq, -1.0);
                    let d = tape.offset(neg, 1.0);
                    tape.mul(g, d)?
                }
                Activation::LeakyRelu => {
                    let mask = tape
                        .value(trace.pre[k])
                        .map(|v| leaky_slope(v, LEAKY_SLOPE));
                    let m = tape.constant(mask);
                    tape.mul(g, m)?
                }
            };
            g = tape.matmul_nt(g, trace.weights[k])?;
        }
        Ok(g)
    }
}

/// A network producing one score per input row.
pub trait ScalarNet {
    type Trace;

    fn input_dim(&self) -> usize;
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn record(&self, tape: &mut TapeGraph, params: &[NodeId], x: NodeId) -> Result<Self::Trace>;
    fn trace_output(trace: &Self::Trace) -> NodeId;
    /// `∇ₓ score` for every row, built from graph operations.
    fn record_input_gradient(&self, tape: &mut TapeGraph, trace: &Self::Trace) -> Result<NodeId>;
    fn score(&self, x: &Tensor) -> Result<Tensor>;
}

impl ScalarNet for Mlp {
    type Trace = MlpTrace;

    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn parameters(&self) -> Vec<&Tensor> {
        Mlp::parameters(self)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        Mlp::parameters_mut(self)
    }

    fn record(&self, tape: &mut TapeGraph, params: &[NodeId], x: NodeId) -> Result<MlpTrace> {
        Mlp::record(self, tape, params, x)
    }

    fn trace_output(trace: &MlpTrace) -> NodeId {
        trace.output()
    }

    fn record_input_gradient(&self, tape: &mut TapeGraph, trace: &MlpTrace) -> Result<NodeId> {
        if self.output_dim() != 1 {
            return Err(Error::invalid(format!(
                "input gradient needs a scalar network, output width is {}",
                self.output_dim()
            )));
        }
        let rows = tape.shape(trace.input)[0];
        let seed = tape.constant(Tensor::ones(rows, 1));
        self.record_backprop(tape, trace, seed)
    }

    fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

/// Adds every parameter of `net` to the tape, as trainable leaves or constants.
pub fn bind<N: ScalarNet + ?Sized>(tape: &mut TapeGraph, net: &N, trainable: bool) -> Vec<NodeId> {
    net.parameters()
        .into_iter()
        .map(|p| {
            if trainable {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect()
}

/// `mlp_forward` on a fresh tape with trainable weights.
pub fn mlp_forward(net: &Mlp, x: &Tensor, tape: &mut TapeGraph) -> Result<(NodeId, Vec<NodeId>)> {
    let params = bind(tape, net, true);
    let xi = tape.constant(x.clone());
    let trace = net.record(tape, &params, xi)?;
    Ok((trace.output(), params))
}

/// Values of `∇ₓ D(x)` per row.
pub fn input_gradient<N: ScalarNet>(net: &N, x: &Tensor) -> Result<Tensor> {
    let mut tape = TapeGraph::new();
    let params = bind(&mut tape, net, false);
    let xi = tape.constant(x.clone());
    let trace = net.record(&mut tape, &params, xi)?;
    let g = net.record_input_gradient(&mut tape, &trace)?;
    Ok(tape.value(g).clone())
}

/// `alpha · mean_rows (‖∇ₓ D(x̂)‖₂ − 1)²` as a scalar node.
pub fn gradient_penalty<N: ScalarNet>(
    tape: &mut TapeGraph,
    net: &N,
    params: &[NodeId],
    x_hat: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "penalty weight must be >= 0, got {alpha}"
        )));
    }
    let trace = net.record(tape, params, x_hat)?;
    let g = net.record_input_gradient(tape, &trace)?;
    let sq = tape.square(g);
    let norm2 = tape.sum_cols(sq);
    let norm = tape.sqrt(norm2);
    let dev = tape.offset(norm, -1.0);
    let dev2 = tape.square(dev);
    let m = tape.mean(dev2);
    Ok(tape.scale(m, alpha))
}

/// Penalty value with the net's current weights.
pub fn gradient_penalty_value<N: ScalarNet>(net: &N, x_hat: &Tensor, alpha: f64) -> Result<f64> {
    let mut tape = TapeGraph::new();
    let params = bind(&mut tape, net, false);
    let xi = tape.constant(x_hat.clone());
    let p = gradient_penalty(&mut tape, net, &params, xi, alpha)?;
    Ok(tape.value(p).item())
}
