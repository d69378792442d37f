//! Multilayer perceptron classifier with hand-written backpropagation.
//!
//! Parameters are stored in registration order `W0, b0, W1, b1, ...`, with
//! `W_l` of shape `dims[l] × dims[l+1]` and `b_l` of shape `dims[l+1]`.
//! Hidden layers apply the activation; the output layer is a softmax.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::RngStream;
use crate::tensor::{Tensor, TensorError};

/// Upper bound on parameter count for finite-difference gradients.
pub const FINITE_DIFF_MAX_PARAMS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("a model needs at least an input and an output width, got {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("input width {actual} does not match model input width {expected}")]
    InputWidth { expected: usize, actual: usize },
    #[error("label {label} at row {row} outside [0, {n_classes})")]
    LabelOutOfRange { row: usize, label: usize, n_classes: usize },
    #[error("{labels} labels for {rows} input rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model has {0} parameters; finite differences are limited to {FINITE_DIFF_MAX_PARAMS}")]
    TooManyParams(usize),
    #[error("parameter list does not fit the architecture: {0}")]
    ParamLayout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu or tanh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `z_l` for every layer, logits last.
    pub pre_activations: Vec<Tensor>,
    /// Layer inputs: `a_0 = x`, then each hidden activation.
    pub activations: Vec<Tensor>,
    pub probs: Tensor,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let z = logits.row(r);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::from_parts(vec![rows, cols], out)
}

fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z[k] - max - lse
}

impl MlpModel {
    /// Glorot-uniform weights drawn from `rng` (W0 first, row-major), zero biases.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut RngStream) -> Result<Self, ModelError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ModelError::InvalidDims(dims.to_vec()));
        }
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.uniform(-r, r)).collect();
            params.push(Tensor::new(vec![fan_in, fan_out], data)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_params(dims: &[usize], activation: Activation, params: Vec<Tensor>) -> Result<Self, ModelError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ModelError::InvalidDims(dims.to_vec()));
        }
        let mut model = Self {
            dims: dims.to_vec(),
            activation,
            params: Vec::new(),
        };
        model.set_params(params)?;
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Names matching [`MlpModel::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.n_layers())
            .flat_map(|l| [format!("W{l}"), format!("b{l}")])
            .collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<(), ModelError> {
        let expected = 2 * (self.dims.len() - 1);
        if params.len() != expected {
            return Err(ModelError::ParamLayout(format!(
                "expected {expected} tensors, got {}",
                params.len()
            )));
        }
        for (l, w) in self.dims.windows(2).enumerate() {
            if params[2 * l].shape() != [w[0], w[1]] || params[2 * l + 1].shape() != [w[1]] {
                return Err(ModelError::ParamLayout(format!(
                    "layer {l}: got W {:?}, b {:?} for widths {} -> {}",
                    params[2 * l].shape(),
                    params[2 * l + 1].shape(),
                    w[0],
                    w[1]
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer + 1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace, ModelError> {
        self.forward_with(&self.params, x)
    }

    fn forward_with(&self, params: &[Tensor], x: &Tensor) -> Result<ForwardTrace, ModelError> {
        if x.rank() != 2 || x.cols() != self.dims[0] {
            return Err(ModelError::InputWidth {
                expected: self.dims[0],
                actual: if x.rank() == 2 { x.cols() } else { x.len() },
            });
        }
        let batch = x.rows();
        let mut pre_activations = Vec::with_capacity(self.n_layers());
        let mut activations = vec![x.clone()];
        for l in 0..self.n_layers() {
            let input = activations.last().unwrap();
            let z = input
                .matmul(&params[2 * l])?
                .add(&params[2 * l + 1].repeat_rows(batch))?;
            if l + 1 < self.n_layers() {
                activations.push(z.map(|v| self.activation.apply(v)));
            }
            pre_activations.push(z);
        }
        let probs = softmax_rows(pre_activations.last().unwrap());
        Ok(ForwardTrace {
            pre_activations,
            activations,
            probs,
        })
    }

    fn check_labels(&self, x: &Tensor, labels: &[usize]) -> Result<(), ModelError> {
        if labels.is_empty() || x.rank() != 2 {
            return Err(ModelError::EmptyBatch);
        }
        if labels.len() != x.rows() {
            return Err(ModelError::LabelCount {
                rows: x.rows(),
                labels: labels.len(),
            });
        }
        let n_classes = self.n_classes();
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(ModelError::LabelOutOfRange { row, label, n_classes });
        }
        Ok(())
    }

    fn loss_from_trace(trace: &ForwardTrace, labels: &[usize]) -> f64 {
        let logits = trace.pre_activations.last().unwrap();
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &k)| -log_softmax_at(logits.row(r), k))
            .sum();
        total / labels.len() as f64
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
        self.check_labels(x, labels)?;
        Ok(Self::loss_from_trace(&self.forward(x)?, labels))
    }

    fn loss_with(&self, params: &[Tensor], x: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
        Ok(Self::loss_from_trace(&self.forward_with(params, x)?, labels))
    }

    /// Mean cross-entropy and its gradient for every parameter tensor.
    pub fn loss_and_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>), ModelError> {
        self.check_labels(x, labels)?;
        let trace = self.forward(x)?;
        let loss = Self::loss_from_trace(&trace, labels);
        let batch = labels.len();
        let n_classes = self.n_classes();

        // dL/dz for the output layer: (P - Y) / B.
        let mut delta: Vec<f64> = trace.probs.as_slice().to_vec();
        for (r, &k) in labels.iter().enumerate() {
            delta[r * n_classes + k] -= 1.0;
        }
        let inv_b = 1.0 / batch as f64;
        delta.iter_mut().for_each(|d| *d *= inv_b);
        let mut delta = Tensor::from_parts(vec![batch, n_classes], delta);

        let mut grads = vec![None; self.params.len()];
        for l in (0..self.n_layers()).rev() {
            let input = &trace.activations[l];
            grads[2 * l] = Some(input.transpose().matmul(&delta)?);
            grads[2 * l + 1] = Some(delta.reduce_sum(0)?);
            if l > 0 {
                let back = delta.matmul(&self.params[2 * l].transpose())?;
                let fprime = trace.pre_activations[l - 1].map(|z| self.activation.derivative(z));
                delta = back.mul(&fprime)?;
            }
        }
        Ok((loss, grads.into_iter().map(Option::unwrap).collect()))
    }

    /// Central-difference gradient of the batch loss.
    pub fn finite_diff_grad(&self, x: &Tensor, labels: &[usize], h: f64) -> Result<Vec<Tensor>, ModelError> {
        self.check_labels(x, labels)?;
        if self.n_params() > FINITE_DIFF_MAX_PARAMS {
            return Err(ModelError::TooManyParams(self.n_params()));
        }
        // Forward errors were ruled out by `check_labels` and the first pass.
        self.loss_with(&self.params, x, labels)?;
        Ok(central_difference(&self.params, h, |p| {
            self.loss_with(p, x, labels).expect("validated batch")
        }))
    }
}

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every component of every tensor.
pub fn central_difference(params: &[Tensor], h: f64, f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for ti in 0..params.len() {
        let base = params[ti].as_slice().to_vec();
        let mut grad = vec![0.0; base.len()];
        for (j, g) in grad.iter_mut().enumerate() {
            let mut probe = base.clone();
            probe[j] = base[j] + h;
            work[ti] = Tensor::from_parts(params[ti].shape().to_vec(), probe.clone());
            let up = f(&work);
            probe[j] = base[j] - h;
            work[ti] = Tensor::from_parts(params[ti].shape().to_vec(), probe);
            let down = f(&work);
            *g = (up - down) / (2.0 * h);
        }
        work[ti] = params[ti].clone();
        out.push(Tensor::from_parts(params[ti].shape().to_vec(), grad));
    }
    out
}

/// l2 norm of each layer's gradient (`W` and `b` together), input to output.
/// `grads` follows parameter registration order.
pub fn per_layer_grad_norms(grads: &[Tensor]) -> Vec<f64> {
    grads
        .chunks(2)
        .map(|layer| layer.iter().map(Tensor::squared_norm).sum::<f64>().sqrt())
        .collect()
}

/// Max over tensors of the relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
        .map(|(&p, &q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
        .fold(0.0, f64::max)
}
