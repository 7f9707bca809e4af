//! Feed-forward MLP with exact reverse-mode gradients.
//!
//! Layout: layer `l` computes `z_l = a_{l-1} W_l^T + b_l` with `W_l` stored
//! `out x in` row-major. Hidden layers apply the activation; the output layer
//! is linear (the network regresses an unbounded velocity field).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Gelu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => gelu(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let y = x.tanh();
                1.0 - y * y
            }
            Activation::Gelu => gelu_derivative(x),
        }
    }
}

// tanh form of GELU; its derivative below is exact for this form so the
// analytic gradients agree with finite differences.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("mlp", "input and output dims must be >= 1"));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::invalid("mlp.hidden_widths", "at least one hidden layer required"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("mlp.hidden_widths", "layer widths must be >= 1"));
        }
        Ok(())
    }

    /// `(in, out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Per-layer weights and biases for one MLP, addressable by layer index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer {
                weight: Matrix::zeros(o, i),
                bias: vec![0.0; o],
            })
            .collect();
        ParamSet { layers }
    }

    /// Weight init: normal with std `1/sqrt(fan_in)`, zero bias.
    pub fn init(spec: &MlpSpec, rng: &mut crate::numcore::RngStream) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let std = (1.0 / i as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(o, i, |_, _| rng.normal(0.0, std)),
                    bias: vec![0.0; o],
                }
            })
            .collect();
        ParamSet { layers }
    }

    pub fn matches_spec(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        self.layers.len() == dims.len()
            && self
                .layers
                .iter()
                .zip(dims)
                .all(|(l, (i, o))| l.weight.rows() == o && l.weight.cols() == i && l.bias.len() == o)
    }

    pub fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn read_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::shape(
                "ParamSet::read_flat",
                format!("{}", self.flat_len()),
                format!("{}", flat.len()),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let wlen = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    pub fn validate(&self, spec: &MlpSpec) -> Result<()> {
        if !self.matches_spec(spec) {
            return Err(Error::shape(
                "ParamSet::validate",
                format!("{:?}", spec.layer_dims()),
                "stored layer shapes".to_string(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.weight.validate().map_err(|_| Error::NonFinite {
                context: format!("ParamSet layer {i} weight"),
                index: i,
            })?;
            if let Some(j) = l.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("ParamSet layer {i} bias"),
                    index: j,
                });
            }
        }
        Ok(())
    }
}

fn check_input(spec: &MlpSpec, params: &ParamSet, input: &Matrix) -> Result<()> {
    if !params.matches_spec(spec) {
        return Err(Error::shape(
            "mlp params",
            format!("{:?}", spec.layer_dims()),
            "mismatched ParamSet".to_string(),
        ));
    }
    if input.cols() != spec.input_dim {
        return Err(Error::shape(
            "mlp input",
            format!("cols == {}", spec.input_dim),
            format!("cols == {}", input.cols()),
        ));
    }
    Ok(())
}

struct ForwardTrace {
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
    /// Activated output of each hidden layer (layer inputs beyond the first).
    post: Vec<Matrix>,
    output: Matrix,
}

fn affine(input: &Matrix, layer: &Layer) -> Matrix {
    let mut z = input.matmul_nt(&layer.weight);
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        for (v, b) in row.iter_mut().zip(layer.bias.iter()) {
            *v += b;
        }
    }
    z
}

fn forward_trace(params: &ParamSet, spec: &MlpSpec, input: &Matrix) -> ForwardTrace {
    let n_hidden = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(n_hidden);
    let mut post = Vec::with_capacity(n_hidden);
    let mut current = input.clone();
    for layer in &params.layers[..n_hidden] {
        let z = affine(&current, layer);
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = spec.activation.apply(*v);
        }
        pre.push(z);
        current = a.clone();
        post.push(a);
    }
    let output = affine(&current, &params.layers[n_hidden]);
    ForwardTrace { pre, post, output }
}

/// Runs the network on a batch (rows are examples).
pub fn mlp_forward(params: &ParamSet, spec: &MlpSpec, input: &Matrix) -> Result<Matrix> {
    check_input(spec, params, input)?;
    Ok(forward_trace(params, spec, input).output)
}

/// Exact reverse-mode gradients of `<upstream_grad, output>` with respect to
/// every parameter and to the input.
pub fn mlp_backward(
    params: &ParamSet,
    spec: &MlpSpec,
    input: &Matrix,
    upstream_grad: &Matrix,
) -> Result<(ParamSet, Matrix)> {
    check_input(spec, params, input)?;
    if upstream_grad.rows() != input.rows() || upstream_grad.cols() != spec.output_dim {
        return Err(Error::shape(
            "mlp upstream_grad",
            format!("{} x {}", input.rows(), spec.output_dim),
            format!("{} x {}", upstream_grad.rows(), upstream_grad.cols()),
        ));
    }
    let trace = forward_trace(params, spec, input);
    let mut grads = ParamSet::zeros(spec);
    let n_layers = params.layers.len();

    let mut g = upstream_grad.clone();
    for l in (0..n_layers).rev() {
        let layer_input = if l == 0 { input } else { &trace.post[l - 1] };
        // dW = g^T * input, db = column sums of g.
        grads.layers[l].weight = g.matmul_tn(layer_input);
        for r in 0..g.rows() {
            let row = g.row(r);
            for (b, &v) in grads.layers[l].bias.iter_mut().zip(row.iter()) {
                *b += v;
            }
        }
        // Propagate to the layer input.
        let mut gi = g.matmul(&params.layers[l].weight);
        if l > 0 {
            let z = &trace.pre[l - 1];
            for (v, &zv) in gi.data_mut().iter_mut().zip(z.data().iter()) {
                *v *= spec.activation.derivative(zv);
            }
        }
        g = gi;
    }
    Ok((grads, g))
}
