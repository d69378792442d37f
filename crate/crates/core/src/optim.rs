//! StochGradAdam and the Adam, RMSProp and SGD-with-momentum baselines.
//!
//! All four share [`OptimizerState`]: one `(m, v)` pair per parameter tensor,
//! registered in a fixed order, plus the completed-step counter `t`.
//! RMSProp only uses `v`; SGD with momentum only uses `m`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{apply_mask, clip_by_global_norm, gen_mask, MaskTensor, RngStream, SamplingError};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParam(String),
    #[error("expected {expected} gradient tensors, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("tensor {tensor}: parameter shape {param:?} but gradient shape {grad:?}")]
    ShapeMismatch {
        tensor: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("step rejected: gradient of tensor {tensor} has non-finite value {value} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize, value: f64 },
    #[error("step produced a non-finite parameter in tensor {0}")]
    NonFiniteUpdate(usize),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `b1(t) = β1`, `b2(t) = β2`.
    Constant,
    /// `b1(t) = β1^t`, `b2(t) = β2^t`.
    Power,
    /// `b1(t) = β1 λ^(t-1)`, `b2(t) = β2`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `α_t = α / √t`.
    InvSqrt,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($ty), other, [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

named_enum!(BetaSchedule { Constant => "constant", Power => "power", Exponential => "exponential" });
named_enum!(LrSchedule { Constant => "constant", InvSqrt => "inv_sqrt" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Probability that a gradient component survives the mask.
    pub s: f64,
    /// Decay factor applied to β1 under [`BetaSchedule::Exponential`].
    pub lambda: f64,
    pub beta_schedule: BetaSchedule,
    pub lr_schedule: LrSchedule,
    /// Optional global-norm clipping threshold, applied before masking.
    pub clip: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            s: 0.8,
            lambda: 1.0 - 1e-8,
            beta_schedule: BetaSchedule::Constant,
            lr_schedule: LrSchedule::Constant,
            clip: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::InvalidHyperParam(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("beta1 must be in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta2 must be in [0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return bad(format!("s must be in [0, 1], got {}", self.s));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda must be in (0, 1], got {}", self.lambda));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip threshold must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    /// `β1² / √β2`; the moment-sum bound needs this below 1.
    pub fn gamma(&self) -> f64 {
        self.beta1 * self.beta1 / self.beta2.sqrt()
    }

    pub fn validate_for_theory(&self) -> Result<(), OptimError> {
        self.validate()?;
        if self.gamma() >= 1.0 {
            return Err(OptimError::InvalidHyperParam(format!(
                "beta1^2/sqrt(beta2) = {} must be < 1",
                self.gamma()
            )));
        }
        Ok(())
    }
}

/// Per-step EMA coefficients and learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decays {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
}

fn powi_u64(base: f64, exp: u64) -> f64 {
    base.powi(i32::try_from(exp).unwrap_or(i32::MAX))
}

/// Effective `(b1(t), b2(t), α_t)` for step `t ≥ 1`.
pub fn effective_decays(t: u64, hp: &HyperParams) -> Decays {
    assert!(t >= 1, "steps are numbered from 1");
    let (beta1, beta2) = match hp.beta_schedule {
        BetaSchedule::Constant => (hp.beta1, hp.beta2),
        BetaSchedule::Power => (powi_u64(hp.beta1, t), powi_u64(hp.beta2, t)),
        BetaSchedule::Exponential => (hp.beta1 * powi_u64(hp.lambda, t - 1), hp.beta2),
    };
    let alpha = match hp.lr_schedule {
        LrSchedule::Constant => hp.alpha,
        LrSchedule::InvSqrt => hp.alpha / (t as f64).sqrt(),
    };
    Decays { beta1, beta2, alpha }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    t: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    /// Zero moments for each parameter shape, in registration order.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let moments = shapes
            .into_iter()
            .map(|s| Moments {
                m: Tensor::zeros(s),
                v: Tensor::zeros(s),
            })
            .collect();
        Self { t: 0, moments }
    }

    pub fn for_params(params: &[Tensor]) -> Self {
        Self::new(params.iter().map(Tensor::shape))
    }

    /// Restores a saved state. Shapes of `m` and `v` must agree pairwise.
    pub fn from_parts(t: u64, moments: Vec<Moments>) -> Result<Self, OptimError> {
        for (i, mv) in moments.iter().enumerate() {
            if mv.m.shape() != mv.v.shape() {
                return Err(OptimError::ShapeMismatch {
                    tensor: i,
                    param: mv.m.shape().to_vec(),
                    grad: mv.v.shape().to_vec(),
                });
            }
            if mv.v.as_slice().iter().any(|&x| x < 0.0) {
                return Err(OptimError::InvalidHyperParam(format!(
                    "second moment of tensor {i} has a negative entry"
                )));
            }
        }
        Ok(Self { t, moments })
    }

    /// Completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }
}

fn check_inputs(state: &OptimizerState, params: &[Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::CountMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if state.moments.len() != params.len() {
        return Err(OptimError::CountMismatch {
            expected: state.moments.len(),
            actual: params.len(),
        });
    }
    for (i, ((p, g), mv)) in params.iter().zip(grads).zip(&state.moments).enumerate() {
        if p.shape() != g.shape() || p.shape() != mv.m.shape() {
            return Err(OptimError::ShapeMismatch {
                tensor: i,
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        // Tensors reject NaN/Inf on construction; checked anyway for gradients
        // assembled through `set_data` by foreign callers.
        if let Some(index) = g.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                tensor: i,
                index,
                value: g.as_slice()[index],
            });
        }
    }
    Ok(())
}

fn maybe_clip(grads: &[Tensor], hp: &HyperParams) -> Result<Option<Vec<Tensor>>, OptimError> {
    match hp.clip {
        Some(c) => Ok(Some(clip_by_global_norm(grads, c)?)),
        None => Ok(None),
    }
}

/// Moment update, bias correction and parameter step on one tensor.
/// Bias correction always uses the base β powers.
fn adam_kernel(param: &mut Tensor, mv: &mut Moments, phi: &Tensor, decays: Decays, hp: &HyperParams, t: u64) {
    let bc1 = 1.0 - powi_u64(hp.beta1, t);
    let bc2 = 1.0 - powi_u64(hp.beta2, t);
    let Decays { beta1: b1, beta2: b2, alpha } = decays;
    let mut theta = param.as_slice().to_vec();
    let mut m = mv.m.as_slice().to_vec();
    let mut v = mv.v.as_slice().to_vec();
    for (((th, mi), vi), &g) in theta.iter_mut().zip(&mut m).zip(&mut v).zip(phi.as_slice()) {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *th -= alpha * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    mv.m = Tensor::from_parts(mv.m.shape().to_vec(), m);
    mv.v = Tensor::from_parts(mv.v.shape().to_vec(), v);
    *param = Tensor::from_parts(param.shape().to_vec(), theta);
}

fn finish(params: &[Tensor]) -> Result<(), OptimError> {
    match params.iter().position(|p| p.as_slice().iter().any(|x| !x.is_finite())) {
        Some(i) => Err(OptimError::NonFiniteUpdate(i)),
        None => Ok(()),
    }
}

/// One StochGradAdam step over all parameter tensors.
///
/// Masks are drawn from `rng` tensor by tensor in registration order, one
/// uniform per component, so `s = 1` consumes the stream but yields `φ = g`.
/// Returns the masks that were applied.
pub fn stochgradadam_step(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
    hp: &HyperParams,
    rng: &mut RngStream,
) -> Result<Vec<MaskTensor>, OptimError> {
    check_inputs(state, params, grads)?;
    let clipped = maybe_clip(grads, hp)?;
    let grads = clipped.as_deref().unwrap_or(grads);
    let masks = grads
        .iter()
        .map(|g| gen_mask(rng, g.shape(), hp.s))
        .collect::<Result<Vec<_>, _>>()?;
    let t = state.t + 1;
    let decays = effective_decays(t, hp);
    let mut next = params.to_vec();
    let mut moments = state.moments.clone();
    for (((p, mv), g), mask) in next.iter_mut().zip(&mut moments).zip(grads).zip(&masks) {
        let phi = apply_mask(mask, g)?;
        adam_kernel(p, mv, &phi, decays, hp, t);
    }
    finish(&next)?;
    params.clone_from_slice(&next);
    state.moments = moments;
    state.t = t;
    Ok(masks)
}

/// StochGradAdam with one child stream per tensor (`parent_output ^ index`),
/// processing tensors on scoped threads. Deterministic, but the trajectory
/// differs from [`stochgradadam_step`].
pub fn stochgradadam_step_parallel(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
    hp: &HyperParams,
    rng: &mut RngStream,
) -> Result<Vec<MaskTensor>, OptimError> {
    check_inputs(state, params, grads)?;
    validate_rate_for(hp)?;
    let clipped = maybe_clip(grads, hp)?;
    let grads = clipped.as_deref().unwrap_or(grads);
    let streams: Vec<RngStream> = (0..grads.len()).map(|i| rng.child(i as u64)).collect();
    let t = state.t + 1;
    let decays = effective_decays(t, hp);
    let mut next = params.to_vec();
    let mut moments = state.moments.clone();
    let masks = std::thread::scope(|scope| {
        let handles: Vec<_> = next
            .iter_mut()
            .zip(&mut moments)
            .zip(grads)
            .zip(streams)
            .map(|(((p, mv), g), mut stream)| {
                scope.spawn(move || {
                    let mask = gen_mask(&mut stream, g.shape(), hp.s).expect("rate validated");
                    let phi = apply_mask(&mask, g).expect("shapes validated");
                    adam_kernel(p, mv, &phi, decays, hp, t);
                    mask
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("mask worker panicked"))
            .collect::<Vec<_>>()
    });
    finish(&next)?;
    params.clone_from_slice(&next);
    state.moments = moments;
    state.t = t;
    Ok(masks)
}

fn validate_rate_for(hp: &HyperParams) -> Result<(), OptimError> {
    crate::sampling::validate_rate(hp.s).map_err(OptimError::from)
}

/// Standard Adam: the StochGradAdam update with `Ω ≡ 1`.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
    hp: &HyperParams,
) -> Result<(), OptimError> {
    check_inputs(state, params, grads)?;
    let clipped = maybe_clip(grads, hp)?;
    let grads = clipped.as_deref().unwrap_or(grads);
    let t = state.t + 1;
    let decays = effective_decays(t, hp);
    let mut next = params.to_vec();
    let mut moments = state.moments.clone();
    for ((p, mv), g) in next.iter_mut().zip(&mut moments).zip(grads) {
        adam_kernel(p, mv, g, decays, hp, t);
    }
    finish(&next)?;
    params.clone_from_slice(&next);
    state.moments = moments;
    state.t = t;
    Ok(())
}

/// `v ← ρv + (1-ρ)g²`, `θ ← θ - α g / (√v + ε)` with `ρ = β2`.
pub fn rmsprop_step(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
    hp: &HyperParams,
) -> Result<(), OptimError> {
    check_inputs(state, params, grads)?;
    let clipped = maybe_clip(grads, hp)?;
    let grads = clipped.as_deref().unwrap_or(grads);
    let t = state.t + 1;
    let alpha = effective_decays(t, hp).alpha;
    let rho = hp.beta2;
    let mut next = params.to_vec();
    let mut moments = state.moments.clone();
    for ((p, mv), g) in next.iter_mut().zip(&mut moments).zip(grads) {
        let mut theta = p.as_slice().to_vec();
        let mut v = mv.v.as_slice().to_vec();
        for ((th, vi), &gi) in theta.iter_mut().zip(&mut v).zip(g.as_slice()) {
            *vi = rho * *vi + (1.0 - rho) * gi * gi;
            *th -= alpha * gi / (vi.sqrt() + hp.epsilon);
        }
        mv.v = Tensor::from_parts(mv.v.shape().to_vec(), v);
        *p = Tensor::from_parts(p.shape().to_vec(), theta);
    }
    finish(&next)?;
    params.clone_from_slice(&next);
    state.moments = moments;
    state.t = t;
    Ok(())
}

/// `m ← β1 m + g`, `θ ← θ - α m`.
pub fn sgd_momentum_step(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
    hp: &HyperParams,
) -> Result<(), OptimError> {
    check_inputs(state, params, grads)?;
    let clipped = maybe_clip(grads, hp)?;
    let grads = clipped.as_deref().unwrap_or(grads);
    let t = state.t + 1;
    let alpha = effective_decays(t, hp).alpha;
    let mut next = params.to_vec();
    let mut moments = state.moments.clone();
    for ((p, mv), g) in next.iter_mut().zip(&mut moments).zip(grads) {
        let mut theta = p.as_slice().to_vec();
        let mut m = mv.m.as_slice().to_vec();
        for ((th, mi), &gi) in theta.iter_mut().zip(&mut m).zip(g.as_slice()) {
            *mi = hp.beta1 * *mi + gi;
            *th -= alpha * *mi;
        }
        mv.m = Tensor::from_parts(mv.m.shape().to_vec(), m);
        *p = Tensor::from_parts(p.shape().to_vec(), theta);
    }
    finish(&next)?;
    params.clone_from_slice(&next);
    state.moments = moments;
    state.t = t;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    StochGradAdam,
    Adam,
    RmsProp,
    SgdMomentum,
}

named_enum!(OptimizerKind {
    StochGradAdam => "stochgradadam",
    Adam => "adam",
    RmsProp => "rmsprop",
    SgdMomentum => "sgd_momentum",
});

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::StochGradAdam,
        OptimizerKind::Adam,
        OptimizerKind::RmsProp,
        OptimizerKind::SgdMomentum,
    ];
}

/// How StochGradAdam draws its masks when a step spans several tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskStreams {
    /// One stream, tensors in registration order.
    #[default]
    Serial,
    /// One child stream per tensor; tensors updated on worker threads.
    PerTensor,
}

named_enum!(MaskStreams { Serial => "serial", PerTensor => "per_tensor" });

/// An optimizer bound to its hyperparameters and state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hp: HyperParams,
    pub mask_streams: MaskStreams,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hp: HyperParams, params: &[Tensor]) -> Result<Self, OptimError> {
        hp.validate()?;
        Ok(Self {
            kind,
            hp,
            mask_streams: MaskStreams::Serial,
            state: OptimizerState::for_params(params),
        })
    }

    pub fn with_mask_streams(mut self, mode: MaskStreams) -> Self {
        self.mask_streams = mode;
        self
    }

    /// `rng` is only consumed by StochGradAdam.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], rng: &mut RngStream) -> Result<(), OptimError> {
        match (self.kind, self.mask_streams) {
            (OptimizerKind::StochGradAdam, MaskStreams::Serial) => {
                stochgradadam_step(&mut self.state, params, grads, &self.hp, rng).map(drop)
            }
            (OptimizerKind::StochGradAdam, MaskStreams::PerTensor) => {
                stochgradadam_step_parallel(&mut self.state, params, grads, &self.hp, rng).map(drop)
            }
            (OptimizerKind::Adam, _) => adam_step(&mut self.state, params, grads, &self.hp),
            (OptimizerKind::RmsProp, _) => rmsprop_step(&mut self.state, params, grads, &self.hp),
            (OptimizerKind::SgdMomentum, _) => sgd_momentum_step(&mut self.state, params, grads, &self.hp),
        }
    }
}
