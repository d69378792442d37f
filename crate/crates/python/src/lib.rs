use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stochgradadam::analysis;
use stochgradadam::nn::{Activation, MlpModel};
use stochgradadam::optim::{BetaSchedule, HyperParams, LrSchedule, Optimizer, OptimizerKind};
use stochgradadam::runner::{self, ExperimentConfig};
use stochgradadam::sampling::{self, MaskTensor};
use stochgradadam::tensor::Tensor;
use stochgradadam::theory::{self, GradientTrace};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn rows_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(value_err)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// splitmix64 stream shared with the Rust library.
#[pyclass(name = "RngStream", module = "stochgradadam_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRngStream {
    inner: sampling::RngStream,
}

#[pymethods]
impl PyRngStream {
    #[new]
    fn new(seed: u64) -> Self {
        Self {
            inner: sampling::RngStream::new(seed),
        }
    }

    #[getter]
    fn state(&self) -> u64 {
        self.inner.state()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn next_f64(&mut self) -> f64 {
        self.inner.next_f64()
    }

    fn fork(&mut self) -> Self {
        Self {
            inner: self.inner.fork(),
        }
    }
}

/// Flat 0/1 mask of `prod(shape)` entries, kept with probability `s`.
#[pyfunction]
fn gen_mask(rng: &mut PyRngStream, shape: Vec<usize>, s: f64) -> PyResult<Vec<f64>> {
    let mask = sampling::gen_mask(&mut rng.inner, &shape, s).map_err(value_err)?;
    Ok(mask.entries().iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
}

#[pyfunction]
fn apply_mask(mask: Vec<f64>, grad: Vec<f64>) -> PyResult<Vec<f64>> {
    let keep = mask.iter().map(|&m| m != 0.0).collect();
    let mask = MaskTensor::from_bits(&[mask.len()], keep);
    let grad = Tensor::from_vec(grad).map_err(value_err)?;
    Ok(sampling::apply_mask(&mask, &grad).map_err(value_err)?.into_vec())
}

/// Optimizer over flat parameter vectors of fixed lengths.
#[pyclass(name = "Optimizer", module = "stochgradadam_py")]
struct PyOptimizer {
    inner: Optimizer,
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (kind, sizes, alpha=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8, s=0.8, lam=1.0 - 1e-8, beta_schedule="constant", lr_schedule="constant", clip=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        sizes: Vec<usize>,
        alpha: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        s: f64,
        lam: f64,
        beta_schedule: &str,
        lr_schedule: &str,
        clip: Option<f64>,
    ) -> PyResult<Self> {
        let kind: OptimizerKind = kind.parse().map_err(value_err)?;
        let hp = HyperParams {
            alpha,
            beta1,
            beta2,
            epsilon,
            s,
            lambda: lam,
            beta_schedule: beta_schedule.parse::<BetaSchedule>().map_err(value_err)?,
            lr_schedule: lr_schedule.parse::<LrSchedule>().map_err(value_err)?,
            clip,
        };
        let params: Vec<Tensor> = sizes.iter().map(|&n| Tensor::zeros(&[n])).collect();
        let inner = Optimizer::new(kind, hp, &params).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Completed steps.
    #[getter]
    fn t(&self) -> u64 {
        self.inner.state.t()
    }

    /// Returns the updated parameters.
    fn step(&mut self, params: Vec<Vec<f64>>, grads: Vec<Vec<f64>>, rng: &mut PyRngStream) -> PyResult<Vec<Vec<f64>>> {
        let to_tensors =
            |v: Vec<Vec<f64>>| v.into_iter().map(Tensor::from_vec).collect::<Result<Vec<_>, _>>().map_err(value_err);
        let mut p = to_tensors(params)?;
        let g = to_tensors(grads)?;
        self.inner.step(&mut p, &g, &mut rng.inner).map_err(value_err)?;
        Ok(p.into_iter().map(Tensor::into_vec).collect())
    }
}

#[pyclass(name = "MlpModel", module = "stochgradadam_py")]
struct PyMlpModel {
    inner: MlpModel,
}

#[pymethods]
impl PyMlpModel {
    #[new]
    #[pyo3(signature = (dims, rng, activation="relu"))]
    fn new(dims: Vec<usize>, rng: &mut PyRngStream, activation: &str) -> PyResult<Self> {
        let act: Activation = activation.parse().map_err(value_err)?;
        let inner = MlpModel::new(&dims, act, &mut rng.inner).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    /// Flat parameter tensors in order `W0, b0, W1, b1, ...`.
    fn params(&self) -> Vec<Vec<f64>> {
        self.inner.params().iter().map(|t| t.as_slice().to_vec()).collect()
    }

    fn set_params(&mut self, params: Vec<Vec<f64>>) -> PyResult<()> {
        let shaped = params
            .into_iter()
            .zip(self.inner.params())
            .map(|(v, t)| Tensor::new(t.shape().to_vec(), v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        self.inner.set_params(shaped).map_err(value_err)
    }

    /// Softmax probabilities, one row per input row.
    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let trace = self.inner.forward(&rows_tensor(x)?).map_err(value_err)?;
        Ok(tensor_rows(&trace.probs))
    }

    /// Mean cross-entropy and flat gradients per parameter tensor.
    fn loss_and_grad(&self, x: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let (loss, grads) = self.inner.loss_and_grad(&rows_tensor(x)?, &labels).map_err(value_err)?;
        Ok((loss, grads.into_iter().map(Tensor::into_vec).collect()))
    }
}

#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    analysis::entropy(&p).map_err(value_err)
}

#[pyfunction]
fn normalized_entropy(p: Vec<f64>, n_classes: usize) -> PyResult<f64> {
    analysis::normalized_entropy(&p, n_classes).map_err(value_err)
}

/// Projected rows and explained-variance ratios.
#[pyfunction]
#[pyo3(signature = (x, k=2))]
fn pca_project(x: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let r = analysis::pca_project(&rows_tensor(x)?, k).map_err(value_err)?;
    Ok((tensor_rows(&r.projected), r.explained_ratio))
}

type Lemma43Rows = (Vec<(f64, f64, f64, bool)>, bool);
type Lemma44Rows = (Vec<(f64, f64, f64, f64, bool)>, bool);

fn trace(full: Vec<Vec<f64>>, sampled: Vec<Vec<f64>>) -> PyResult<GradientTrace> {
    GradientTrace::new(full, sampled).map_err(value_err)
}

/// Per-coordinate `(lhs_sampled, lhs_full, rhs, holds)` and the overall verdict.
#[pyfunction]
fn check_lemma43(full: Vec<Vec<f64>>, sampled: Vec<Vec<f64>>) -> PyResult<Lemma43Rows> {
    let r = theory::check_lemma43(&trace(full, sampled)?);
    let coords = r.coords.iter().map(|c| (c.lhs_sampled, c.lhs_full, c.rhs, c.holds)).collect();
    Ok((coords, r.holds))
}

/// Per-coordinate `(lhs_sampled, lhs_full, rhs_sampled, rhs_full, holds)` and the overall verdict.
#[pyfunction]
#[pyo3(signature = (full, sampled, beta1=0.9, beta2=0.999, lam=1.0 - 1e-8, epsilon=1e-8))]
fn check_lemma44(
    full: Vec<Vec<f64>>,
    sampled: Vec<Vec<f64>>,
    beta1: f64,
    beta2: f64,
    lam: f64,
    epsilon: f64,
) -> PyResult<Lemma44Rows> {
    let r = theory::check_lemma44(&trace(full, sampled)?, beta1, beta2, lam, epsilon).map_err(value_err)?;
    let coords = r
        .coords
        .iter()
        .map(|c| (c.lhs_sampled, c.lhs_full, c.rhs_sampled, c.rhs_full, c.holds))
        .collect();
    Ok((coords, r.holds))
}

fn parse_config(text: &str) -> PyResult<ExperimentConfig> {
    let cfg = ExperimentConfig::parse_str(text).map_err(value_err)?;
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Runs a training config given as `key = value` text; returns the summary.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config)?;
    let s = runner::run_experiment(&cfg).map_err(runtime_err)?.summary;
    let d = PyDict::new(py);
    d.set_item("optimizer", s.optimizer)?;
    d.set_item("s", s.s)?;
    d.set_item("seed", s.seed)?;
    d.set_item("epochs", s.epochs)?;
    d.set_item("steps", s.steps)?;
    d.set_item("final_accuracy", s.final_accuracy)?;
    d.set_item("final_loss", s.final_loss)?;
    d.set_item("untrained_entropy", s.untrained_entropy)?;
    d.set_item("initial_entropy", s.initial_entropy)?;
    d.set_item("final_entropy", s.final_entropy)?;
    d.set_item("delta_entropy", s.delta_entropy)?;
    d.set_item("config_hash", s.config_hash)?;
    Ok(d)
}

/// Runs the verification checks; returns `{check: (instances, passed)}`.
#[pyfunction]
fn verify<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse_config(config)?;
    let report = runner::run_verify(&cfg).map_err(runtime_err)?;
    let d = PyDict::new(py);
    for t in report.tallies() {
        d.set_item(t.check, (t.instances, t.passed))?;
    }
    Ok(d)
}

#[pymodule]
pub fn stochgradadam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRngStream>()?;
    m.add_class::<PyOptimizer>()?;
    m.add_class::<PyMlpModel>()?;
    m.add_function(wrap_pyfunction!(gen_mask, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemma43, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemma44, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
