//! Numerical checks of the convergence analysis: the summation inequality on
//! scaled gradients, the bound on the bias-corrected moment sum, and the
//! regret bound of StochGradAdam on online convex problems.
//!
//! Every inequality is evaluated on recorded traces; empirical constants
//! (`G`, `G∞`, `D`, `D∞`) are suprema over the run being checked.

use serde::Serialize;
use thiserror::Error;

use crate::optim::{stochgradadam_step, BetaSchedule, HyperParams, LrSchedule, OptimError, OptimizerState};
use crate::sampling::{apply_mask, gen_mask, RngStream};
use crate::tensor::Tensor;

/// Absolute slack allowed on every inequality.
pub const SLACK: f64 = 1e-9;
/// Iterates with an l2 norm above this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace step {step}: expected {expected} coordinates, got {actual}")]
    Ragged { step: usize, expected: usize, actual: usize },
    #[error("trace step {step}, coordinate {coord}: |phi| = {phi} exceeds |g| = {g}")]
    SampledExceedsFull { step: usize, coord: usize, phi: f64, g: f64 },
    #[error("gamma = beta1^2/sqrt(beta2) = {0} must be < 1")]
    GammaTooLarge(f64),
    #[error("lambda must lie in (0, 1) for the regret bound, got {0}")]
    LambdaOutOfRange(f64),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("diverged at step {step}: ||theta|| = {norm}")]
    Diverged { step: usize, norm: f64 },
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Full gradients `g_t` and sampled gradients `φ_t`, `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrace {
    dim: usize,
    full: Vec<Vec<f64>>,
    sampled: Vec<Vec<f64>>,
}

impl GradientTrace {
    pub fn new(full: Vec<Vec<f64>>, sampled: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        if full.is_empty() || full.len() != sampled.len() {
            return Err(TheoryError::EmptyTrace);
        }
        let dim = full[0].len();
        for (step, (g, p)) in full.iter().zip(&sampled).enumerate() {
            for row in [g, p] {
                if row.len() != dim {
                    return Err(TheoryError::Ragged {
                        step,
                        expected: dim,
                        actual: row.len(),
                    });
                }
            }
            for (coord, (&gi, &pi)) in g.iter().zip(p).enumerate() {
                if pi.abs() > gi.abs() {
                    return Err(TheoryError::SampledExceedsFull { step, coord, phi: pi, g: gi });
                }
            }
        }
        Ok(Self { dim, full, sampled })
    }

    /// A trace whose sampled gradients equal the full ones.
    pub fn unmasked(full: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        let sampled = full.clone();
        Self::new(full, sampled)
    }

    pub fn len(&self) -> usize {
        self.full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn full(&self) -> &[Vec<f64>] {
        &self.full
    }

    pub fn sampled(&self) -> &[Vec<f64>] {
        &self.sampled
    }

    /// `g_{1:T,i}`.
    pub fn full_history(&self, i: usize) -> Vec<f64> {
        self.full.iter().map(|g| g[i]).collect()
    }

    /// `φ_{1:T,i}`.
    pub fn sampled_history(&self, i: usize) -> Vec<f64> {
        self.sampled.iter().map(|p| p[i]).collect()
    }

    /// `max_t ||g_t||_∞`.
    pub fn g_inf(&self) -> f64 {
        self.full.iter().flatten().fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// `max_t ||g_t||_2`.
    pub fn g_l2(&self) -> f64 {
        self.full
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled_abs_sum(history: &[f64]) -> f64 {
    history
        .iter()
        .enumerate()
        .map(|(k, &x)| (x * x / (k + 1) as f64).sqrt())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma43Coord {
    /// `Σ_t √(φ²_{t,i}/t)`
    pub lhs_sampled: f64,
    /// `Σ_t √(g²_{t,i}/t)`
    pub lhs_full: f64,
    /// `2 G∞ ||g_{1:T,i}||_2`
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma43Report {
    pub g_inf: f64,
    pub coords: Vec<Lemma43Coord>,
    pub holds: bool,
}

/// `Σ √(φ²/t) ≤ Σ √(g²/t) ≤ 2 G∞ ||g_{1:T,i}||` per coordinate, with `G∞`
/// taken as the trace maximum.
pub fn check_lemma43(trace: &GradientTrace) -> Lemma43Report {
    let g_inf = trace.g_inf();
    let coords: Vec<Lemma43Coord> = (0..trace.dim())
        .map(|i| {
            let g = trace.full_history(i);
            let lhs_sampled = scaled_abs_sum(&trace.sampled_history(i));
            let lhs_full = scaled_abs_sum(&g);
            let rhs = 2.0 * g_inf * l2(&g);
            Lemma43Coord {
                lhs_sampled,
                lhs_full,
                rhs,
                holds: lhs_sampled <= lhs_full + SLACK && lhs_full <= rhs + SLACK,
            }
        })
        .collect();
    let holds = coords.iter().all(|c| c.holds);
    Lemma43Report { g_inf, coords, holds }
}

/// Sums of `m̂²_t / √(t v̂_t)` along one gradient history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSums {
    /// Denominator guarded as `√(t v̂_t) + ε`.
    pub guarded: f64,
    /// Terms with `v̂_t = 0` dropped instead.
    pub skipping: f64,
    pub skipped_terms: usize,
}

/// Replays the moment recursions with `b1(t) = β1 λ^(t-1)`, constant `β2`,
/// and bias correction by `1 - β^t`.
pub fn moment_sums(history: &[f64], beta1: f64, beta2: f64, lambda: f64, epsilon: f64) -> MomentSums {
    let (mut m, mut v) = (0.0_f64, 0.0_f64);
    let mut out = MomentSums {
        guarded: 0.0,
        skipping: 0.0,
        skipped_terms: 0,
    };
    for (k, &x) in history.iter().enumerate() {
        let t = (k + 1) as i32;
        let b1 = beta1 * lambda.powi(t - 1);
        m = b1 * m + (1.0 - b1) * x;
        v = beta2 * v + (1.0 - beta2) * x * x;
        let m_hat = m / (1.0 - beta1.powi(t));
        let v_hat = v / (1.0 - beta2.powi(t));
        let root = (t as f64 * v_hat).sqrt();
        out.guarded += m_hat * m_hat / (root + epsilon);
        if v_hat > 0.0 {
            out.skipping += m_hat * m_hat / root;
        } else {
            out.skipped_terms += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma44Coord {
    pub lhs_sampled: f64,
    pub lhs_full: f64,
    /// `C ||φ_{1:T,i}||`
    pub rhs_sampled: f64,
    /// `C ||g_{1:T,i}||`
    pub rhs_full: f64,
    pub sampled_sums: MomentSums,
    pub full_sums: MomentSums,
    /// `lhs_sampled ≤ lhs_full`
    pub sampled_le_full: bool,
    /// `lhs_full ≤ rhs_sampled`
    pub full_le_bound_sampled: bool,
    /// `rhs_sampled ≤ rhs_full`
    pub bound_sampled_le_bound_full: bool,
    /// `lhs_sampled ≤ rhs_sampled`: the bound applied to the sampled sequence alone.
    pub sampled_le_own_bound: bool,
    /// `lhs_full ≤ rhs_full`: the bound applied to the full sequence alone.
    pub full_le_own_bound: bool,
    /// The whole chain `lhs_sampled ≤ lhs_full ≤ rhs_sampled ≤ rhs_full`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma44Report {
    pub gamma: f64,
    pub g_inf: f64,
    /// `2 G∞ / ((1-γ)² √(1-β2))`
    pub constant: f64,
    pub coords: Vec<Lemma44Coord>,
    pub holds: bool,
    /// Every coordinate satisfies both per-sequence bounds.
    pub bounds_hold: bool,
}

/// Evaluates the moment-sum chain with the ε-guarded denominators.
pub fn check_lemma44(
    trace: &GradientTrace,
    beta1: f64,
    beta2: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<Lemma44Report, TheoryError> {
    let gamma = beta1 * beta1 / beta2.sqrt();
    if !(gamma < 1.0) {
        return Err(TheoryError::GammaTooLarge(gamma));
    }
    let g_inf = trace.g_inf();
    let constant = 2.0 * g_inf / ((1.0 - gamma).powi(2) * (1.0 - beta2).sqrt());
    let coords: Vec<Lemma44Coord> = (0..trace.dim())
        .map(|i| {
            let g = trace.full_history(i);
            let phi = trace.sampled_history(i);
            let full_sums = moment_sums(&g, beta1, beta2, lambda, epsilon);
            let sampled_sums = moment_sums(&phi, beta1, beta2, lambda, epsilon);
            let (lhs_sampled, lhs_full) = (sampled_sums.guarded, full_sums.guarded);
            let rhs_sampled = constant * l2(&phi);
            let rhs_full = constant * l2(&g);
            let sampled_le_full = lhs_sampled <= lhs_full + SLACK;
            let full_le_bound_sampled = lhs_full <= rhs_sampled + SLACK;
            let bound_sampled_le_bound_full = rhs_sampled <= rhs_full + SLACK;
            Lemma44Coord {
                lhs_sampled,
                lhs_full,
                rhs_sampled,
                rhs_full,
                sampled_sums,
                full_sums,
                sampled_le_full,
                full_le_bound_sampled,
                bound_sampled_le_bound_full,
                sampled_le_own_bound: lhs_sampled <= rhs_sampled + SLACK,
                full_le_own_bound: lhs_full <= rhs_full + SLACK,
                holds: sampled_le_full && full_le_bound_sampled && bound_sampled_le_bound_full,
            }
        })
        .collect();
    let holds = coords.iter().all(|c| c.holds);
    let bounds_hold = coords.iter().all(|c| c.sampled_le_own_bound && c.full_le_own_bound);
    Ok(Lemma44Report {
        gamma,
        g_inf,
        constant,
        coords,
        holds,
        bounds_hold,
    })
}

/// Convex loss streams with a known best fixed point.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexProblem {
    /// `f_t(θ) = Σ a_i (θ_i - θ*_i)²` for every `t`.
    Quadratic { weights: Vec<f64>, optimum: Vec<f64> },
    /// `f_t(θ) = ln(1 + exp(-y_t x_tᵀθ)) + (reg/2)||θ||²`, samples cycled.
    Logistic { xs: Vec<Vec<f64>>, ys: Vec<f64>, reg: f64 },
}

impl ConvexProblem {
    pub fn quadratic(weights: Vec<f64>, optimum: Vec<f64>) -> Result<Self, TheoryError> {
        if weights.is_empty() || weights.len() != optimum.len() || weights.iter().any(|&a| !(a > 0.0)) {
            return Err(TheoryError::InvalidProblem(
                "quadratic weights must be positive and match the optimum's dimension".into(),
            ));
        }
        Ok(Self::Quadratic { weights, optimum })
    }

    pub fn logistic(xs: Vec<Vec<f64>>, ys: Vec<f64>, reg: f64) -> Result<Self, TheoryError> {
        let d = xs.first().map_or(0, Vec::len);
        if d == 0 || xs.len() != ys.len() || xs.iter().any(|x| x.len() != d) {
            return Err(TheoryError::InvalidProblem("logistic samples must be non-empty and rectangular".into()));
        }
        if ys.iter().any(|&y| y != 1.0 && y != -1.0) || !(reg > 0.0) {
            return Err(TheoryError::InvalidProblem("labels must be ±1 and reg > 0".into()));
        }
        Ok(Self::Logistic { xs, ys, reg })
    }

    /// Random logistic stream: standard normal features, labels from a
    /// noisy random hyperplane.
    pub fn random_logistic(rng: &mut RngStream, d: usize, n: usize, reg: f64) -> Result<Self, TheoryError> {
        let w: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
            let margin: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * rng.next_normal();
            ys.push(if margin >= 0.0 { 1.0 } else { -1.0 });
            xs.push(x);
        }
        Self::logistic(xs, ys, reg)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexProblem::Quadratic { weights, .. } => weights.len(),
            ConvexProblem::Logistic { xs, .. } => xs[0].len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvexProblem::Quadratic { .. } => "quadratic",
            ConvexProblem::Logistic { .. } => "logistic",
        }
    }

    /// `f_t(θ)`, `t ≥ 1`.
    pub fn value(&self, t: usize, theta: &[f64]) -> f64 {
        match self {
            ConvexProblem::Quadratic { weights, optimum } => weights
                .iter()
                .zip(optimum)
                .zip(theta)
                .map(|((a, o), th)| a * (th - o).powi(2))
                .sum(),
            ConvexProblem::Logistic { xs, ys, reg } => {
                let j = (t - 1) % xs.len();
                let z = ys[j] * dot(&xs[j], theta);
                softplus(-z) + 0.5 * reg * dot(theta, theta)
            }
        }
    }

    pub fn gradient(&self, t: usize, theta: &[f64]) -> Vec<f64> {
        match self {
            ConvexProblem::Quadratic { weights, optimum } => weights
                .iter()
                .zip(optimum)
                .zip(theta)
                .map(|((a, o), th)| 2.0 * a * (th - o))
                .collect(),
            ConvexProblem::Logistic { xs, ys, reg } => {
                let j = (t - 1) % xs.len();
                let z = ys[j] * dot(&xs[j], theta);
                let coef = -ys[j] * sigmoid(-z);
                xs[j].iter().zip(theta).map(|(x, th)| coef * x + reg * th).collect()
            }
        }
    }

    /// Minimizer of `Σ_{t=1}^T f_t`.
    pub fn best_fixed_point(&self, horizon: usize) -> Vec<f64> {
        match self {
            ConvexProblem::Quadratic { optimum, .. } => optimum.clone(),
            ConvexProblem::Logistic { xs, ys, reg } => logistic_minimizer(xs, ys, *reg, horizon),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Newton's method on the mean of the first `horizon` cycled losses.
fn logistic_minimizer(xs: &[Vec<f64>], ys: &[f64], reg: f64, horizon: usize) -> Vec<f64> {
    let n = xs.len();
    let d = xs[0].len();
    let counts: Vec<f64> = (0..n)
        .map(|j| (horizon / n + usize::from(j < horizon % n)) as f64)
        .collect();
    let total: f64 = counts.iter().sum();
    let mut theta = vec![0.0; d];
    for _ in 0..100 {
        let mut grad: Vec<f64> = theta.iter().map(|th| reg * th).collect();
        let mut hess = vec![0.0; d * d];
        for i in 0..d {
            hess[i * d + i] = reg;
        }
        for j in 0..n {
            if counts[j] == 0.0 {
                continue;
            }
            let w = counts[j] / total;
            let z = ys[j] * dot(&xs[j], &theta);
            let s = sigmoid(-z);
            for a in 0..d {
                grad[a] += w * (-ys[j] * s * xs[j][a]);
                for b in 0..d {
                    hess[a * d + b] += w * s * (1.0 - s) * xs[j][a] * xs[j][b];
                }
            }
        }
        let step = solve_spd(hess, grad.clone(), d);
        theta.iter_mut().zip(&step).for_each(|(th, s)| *th -= s);
        if l2(&grad) < 1e-14 {
            break;
        }
    }
    theta
}

/// Gaussian elimination with partial pivoting.
fn solve_spd(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Vec<f64> {
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..d {
                a.swap(col * d + k, pivot * d + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * d + col];
        for row in col + 1..d {
            let f = a[row * d + col] / diag;
            for k in col..d {
                a[row * d + k] -= f * a[col * d + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let s: f64 = (row + 1..d).map(|k| a[row * d + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * d + row];
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretTrace {
    pub f_theta: Vec<f64>,
    pub f_star: Vec<f64>,
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn from_values(f_theta: Vec<f64>, f_star: Vec<f64>) -> Self {
        let instantaneous: Vec<f64> = f_theta.iter().zip(&f_star).map(|(a, b)| a - b).collect();
        let cumulative = instantaneous
            .iter()
            .scan(0.0, |acc, &r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        Self {
            f_theta,
            f_star,
            instantaneous,
            cumulative,
        }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `R(t) / t` for `t = 1..T`.
    pub fn average_regret(&self) -> Vec<f64> {
        self.cumulative
            .iter()
            .enumerate()
            .map(|(k, r)| r / (k + 1) as f64)
            .collect()
    }

    /// Means of `R(t)/t` over the first and the last tenth of the run.
    pub fn decile_means(&self) -> (f64, f64) {
        let avg = self.average_regret();
        let w = (avg.len() / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&avg[..w]), mean(&avg[avg.len() - w..]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretBoundInputs {
    pub g: f64,
    pub g_inf: f64,
    pub d: f64,
    pub d_inf: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Bias-corrected second moments after the last step.
    pub v_hat_final: Vec<f64>,
}

impl RegretBoundInputs {
    fn validate(&self, trace: &GradientTrace) -> Result<(), TheoryError> {
        if !(self.gamma < 1.0) {
            return Err(TheoryError::GammaTooLarge(self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(TheoryError::LambdaOutOfRange(self.lambda));
        }
        if self.v_hat_final.len() != trace.dim() {
            return Err(TheoryError::Ragged {
                step: trace.len(),
                expected: trace.dim(),
                actual: self.v_hat_final.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretBound {
    /// `D² / (2α(1-β1)) Σ_i √(T v̂_{T,i})`
    pub term1: f64,
    /// `α(β1+1)G∞ / ((1-β1)√(1-β2)(1-γ)²) Σ_i ||φ_{1:T,i}||`
    pub term2: f64,
    /// `Σ_i D² G∞ √(1-β2) / (2α(1-β1)(1-λ)²)`
    pub term3_d: f64,
    /// Same with `D∞²` in place of `D²`.
    pub term3_d_inf: f64,
}

impl RegretBound {
    /// Bound with the `D∞` form of the last term; this is the one checked.
    pub fn total(&self) -> f64 {
        self.term1 + self.term2 + self.term3_d_inf
    }

    /// Bound with `D` in every term.
    pub fn total_with_d(&self) -> f64 {
        self.term1 + self.term2 + self.term3_d
    }
}

/// Right-hand side of the regret bound for a recorded run.
pub fn regret_bound_rhs(inputs: &RegretBoundInputs, trace: &GradientTrace) -> Result<RegretBound, TheoryError> {
    inputs.validate(trace)?;
    let RegretBoundInputs {
        g_inf,
        d,
        d_inf,
        gamma,
        lambda,
        alpha,
        beta1,
        beta2,
        ..
    } = *inputs;
    let horizon = trace.len() as f64;
    let sum_v: f64 = inputs.v_hat_final.iter().map(|v| (horizon * v).sqrt()).sum();
    let sum_phi: f64 = (0..trace.dim()).map(|i| l2(&trace.sampled_history(i))).sum();
    let dims = trace.dim() as f64;
    let term1 = d * d / (2.0 * alpha * (1.0 - beta1)) * sum_v;
    let term2 = alpha * (beta1 + 1.0) * g_inf / ((1.0 - beta1) * (1.0 - beta2).sqrt() * (1.0 - gamma).powi(2)) * sum_phi;
    let third = |diam: f64| {
        dims * diam * diam * g_inf * (1.0 - beta2).sqrt() / (2.0 * alpha * (1.0 - beta1) * (1.0 - lambda).powi(2))
    };
    Ok(RegretBound {
        term1,
        term2,
        term3_d: third(d),
        term3_d_inf: third(d_inf),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretCheck {
    pub r_t: f64,
    pub rhs: f64,
    pub holds: bool,
    pub margin: f64,
}

pub fn check_regret(regret: &RegretTrace, rhs: f64) -> RegretCheck {
    let r_t = regret.total();
    RegretCheck {
        r_t,
        rhs,
        holds: r_t <= rhs + SLACK,
        margin: rhs - r_t,
    }
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub gradients: GradientTrace,
    pub regret: RegretTrace,
    pub bound_inputs: RegretBoundInputs,
    /// `θ_1 .. θ_T`, the points at which each loss was evaluated.
    pub iterates: Vec<Vec<f64>>,
    pub optimum: Vec<f64>,
}

/// Runs StochGradAdam with `α_t = α/√t` and `β1,t = β1 λ^(t-1)` on the
/// convex stream, recording everything the bound checks need.
pub fn run_online_convex(
    problem: &ConvexProblem,
    hp: &HyperParams,
    theta0: &[f64],
    horizon: usize,
    rng: &mut RngStream,
) -> Result<OnlineRun, TheoryError> {
    if horizon == 0 {
        return Err(TheoryError::EmptyTrace);
    }
    let dim = problem.dim();
    if theta0.len() != dim {
        return Err(TheoryError::InvalidProblem(format!(
            "theta0 has {} coordinates, problem has {dim}",
            theta0.len()
        )));
    }
    let hp = HyperParams {
        beta_schedule: BetaSchedule::Exponential,
        lr_schedule: LrSchedule::InvSqrt,
        clip: None,
        ..hp.clone()
    };
    hp.validate_for_theory()?;
    let optimum = problem.best_fixed_point(horizon);
    let mut params = vec![Tensor::from_vec(theta0.to_vec()).map_err(|e| TheoryError::InvalidProblem(e.to_string()))?];
    let mut state = OptimizerState::for_params(&params);
    let (mut full, mut sampled, mut iterates) = (Vec::new(), Vec::new(), Vec::new());
    let (mut f_theta, mut f_star) = (Vec::new(), Vec::new());
    for t in 1..=horizon {
        let theta = params[0].as_slice().to_vec();
        let norm = l2(&theta);
        if !(norm <= DIVERGENCE_NORM) {
            return Err(TheoryError::Diverged { step: t, norm });
        }
        f_theta.push(problem.value(t, &theta));
        f_star.push(problem.value(t, &optimum));
        let g = problem.gradient(t, &theta);
        let grad = vec![Tensor::from_vec(g.clone()).map_err(|e| TheoryError::InvalidProblem(e.to_string()))?];
        let masks = stochgradadam_step(&mut state, &mut params, &grad, &hp, rng)?;
        sampled.push(apply_mask(&masks[0], &grad[0]).expect("mask shape").into_vec());
        full.push(g);
        iterates.push(theta);
    }
    let gradients = GradientTrace::new(full, sampled)?;
    let regret = RegretTrace::from_values(f_theta, f_star);

    let bc2 = 1.0 - hp.beta2.powi(horizon as i32);
    let v_hat_final = state.moments()[0].v.as_slice().iter().map(|v| v / bc2).collect();
    let first = &iterates[0];
    let d = iterates
        .iter()
        .map(|th| {
            let to_opt = l2(&th.iter().zip(&optimum).map(|(a, b)| a - b).collect::<Vec<_>>());
            let to_start = l2(&th.iter().zip(first).map(|(a, b)| a - b).collect::<Vec<_>>());
            to_opt.max(to_start)
        })
        .fold(0.0, f64::max);
    let d_inf = (0..dim)
        .map(|i| {
            let values = iterates.iter().map(|th| th[i]).chain(std::iter::once(optimum[i]));
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max);
    let bound_inputs = RegretBoundInputs {
        g: gradients.g_l2(),
        g_inf: gradients.g_inf(),
        d,
        d_inf,
        gamma: hp.gamma(),
        lambda: hp.lambda,
        alpha: hp.alpha,
        beta1: hp.beta1,
        beta2: hp.beta2,
        v_hat_final,
    };
    Ok(OnlineRun {
        gradients,
        regret,
        bound_inputs,
        iterates,
        optimum,
    })
}

/// Parameters of a random gradient trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSpec {
    pub steps: usize,
    pub dim: usize,
    pub s: f64,
    /// Largest gradient magnitude; attained by at least one entry.
    pub g_inf: f64,
}

/// Entries uniform on `[-G∞, G∞]` with one entry pinned to `±G∞`; `φ` masked
/// at rate `s` with the same stream.
pub fn random_gradient_trace(rng: &mut RngStream, spec: TraceSpec) -> GradientTrace {
    let TraceSpec { steps, dim, s, g_inf } = spec;
    let mut full: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..dim).map(|_| rng.uniform(-g_inf, g_inf)).collect())
        .collect();
    let (t, i) = (rng.below(steps), rng.below(dim));
    full[t][i] = if rng.next_f64() < 0.5 { -g_inf } else { g_inf };
    let sampled = full
        .iter()
        .map(|g| {
            let grad = Tensor::from_vec(g.clone()).expect("finite");
            let mask = gen_mask(rng, &[dim], s).expect("rate in range");
            apply_mask(&mask, &grad).expect("shape").into_vec()
        })
        .collect();
    GradientTrace::new(full, sampled).expect("masked entries never grow")
}
