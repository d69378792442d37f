//! StochGradAdam: Adam with stochastic gradient masking.
//!
//! Each step draws a Bernoulli(`s`) mask over every gradient component,
//! zeroes the dropped components, and feeds the sampled gradient through the
//! usual Adam moment updates and bias correction. The crate bundles the
//! optimizer with baselines, a small MLP training stack, prediction-entropy
//! analysis, numerical checks of the convergence analysis, and a reproducible
//! experiment runner with checkpointing.

// Range checks are written `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod nn;
pub mod optim;
pub mod runner;
pub mod sampling;
pub mod tensor;
pub mod theory;

pub use optim::{HyperParams, Optimizer, OptimizerKind, OptimizerState};
pub use sampling::RngStream;
pub use tensor::Tensor;
