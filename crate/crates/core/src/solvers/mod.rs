//! Damped iteratively reweighted ℓ₁ (DIRL₁) and ℓ₂ (DIRL₂) algorithms.
//!
//! Both algorithms iterate a map `T(x, ε) = ((1−α)x + α S(x, ε), decay(ε))`
//! where `S` solves a separable model problem: a weighted soft-threshold of a
//! gradient step for DIRL₁, a weighted shrinkage for DIRL₂. The perturbed
//! objective is checked for monotone decrease at every iteration.

mod config;
mod trace;

pub use config::{
    lipeomorphism_report, validate_config, Algorithm, EpsDecay, EpsInit, LipeomorphismReport, MapParams, SolverConfig,
    ValidationReport, ValidationWarning,
};
pub use trace::{write_states_jsonl, write_trace_csv, SolveTrace, StateRecord};

use nalgebra::DVector;

use crate::analysis::{self, sign_at, DEFAULT_RESIDUAL_TOL, DEFAULT_SUPPORT_TOL};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::Penalty;

/// Iterates kept for limit extrapolation.
pub const TAIL_LEN: usize = 50;
/// Consecutive small steps required before declaring convergence.
pub const PATIENCE: usize = 10;

const DESCENT_SLACK: f64 = 1e-10;

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { context, expected, got });
    }
    Ok(())
}

fn shrink(z: f64, w: f64) -> f64 {
    let excess = z.abs() - w;
    if excess > 0.0 {
        z.signum() * excess
    } else {
        0.0
    }
}

/// `[S_w(z)]_i = sign(z_i) max(|z_i| − w_i, 0)`; `w_i = ∞` yields 0.
pub fn soft_threshold(z: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("soft_threshold", z.len(), w.len())?;
    if let Some(i) = w.iter().position(|&wi| !(wi >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "threshold w[{i}] = {} is negative",
            w[i]
        )));
    }
    Ok(z.zip_map(w, shrink))
}

/// `w_i = r'(|x_i| + ε_i)`, with `r'(0+)` (possibly `∞`) when the argument is 0.
pub fn dirl1_weights<P: Penalty + ?Sized>(x: &DVector<f64>, eps: &DVector<f64>, reg: &P) -> Result<DVector<f64>> {
    check_len("dirl1_weights", x.len(), eps.len())?;
    Ok(x.zip_map(eps, |xi, ei| reg.weight(xi.abs() + ei)))
}

/// Minimizer of `∇fᵀ(y−x) + β/2 ‖y−x‖² + λ Σ w_i |y_i|`.
pub fn dirl1_subproblem(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    w: &DVector<f64>,
    beta: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_len("dirl1_subproblem (grad)", x.len(), grad.len())?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let z = x - grad / beta;
    soft_threshold(&z, &(w * (lambda / beta)))
}

/// `u_i = r'(z_i) / (2 z_i)` with `z_i = √(x_i² + ε_i²)`; `∞` when `z_i = 0`.
pub fn dirl2_weights<P: Penalty + ?Sized>(x: &DVector<f64>, eps: &DVector<f64>, reg: &P) -> Result<DVector<f64>> {
    check_len("dirl2_weights", x.len(), eps.len())?;
    Ok(x.zip_map(eps, |xi, ei| l2_weight(reg, xi, ei)))
}

fn l2_weight<P: Penalty + ?Sized>(reg: &P, xi: f64, ei: f64) -> f64 {
    let z = xi.hypot(ei);
    if z > 0.0 {
        reg.eval_derivative(z) / (2.0 * z)
    } else {
        f64::INFINITY
    }
}

/// Minimizer of `∇fᵀ(y−x) + β/2 ‖y−x‖² + λ Σ u_i y_i²`:
/// `y_i = (x_i − ∇_i f/β) / (1 + 2λ u_i/β)`.
pub fn dirl2_subproblem(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    u: &DVector<f64>,
    beta: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_len("dirl2_subproblem (grad)", x.len(), grad.len())?;
    check_len("dirl2_subproblem (u)", x.len(), u.len())?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if let Some(i) = u.iter().position(|&ui| !(ui >= 0.0)) {
        return Err(Error::InvalidArgument(format!("weight u[{i}] = {} is negative", u[i])));
    }
    Ok(DVector::from_fn(x.len(), |i, _| {
        shrink_l2(x[i] - grad[i] / beta, u[i], beta, lambda)
    }))
}

fn shrink_l2(z: f64, u: f64, beta: f64, lambda: f64) -> f64 {
    if u.is_infinite() {
        0.0
    } else {
        z / (1.0 + 2.0 * lambda * u / beta)
    }
}

/// Subproblem solution `S^x(x, ε)` of the given algorithm.
pub fn subproblem_map<R: Penalty>(
    algorithm: Algorithm,
    problem: &Problem<R>,
    beta: f64,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> DVector<f64> {
    let grad = problem.smooth().gradient(x);
    subproblem_with_gradient(algorithm, problem, beta, x, eps, &grad)
}

fn subproblem_with_gradient<R: Penalty>(
    algorithm: Algorithm,
    problem: &Problem<R>,
    beta: f64,
    x: &DVector<f64>,
    eps: &DVector<f64>,
    grad: &DVector<f64>,
) -> DVector<f64> {
    let reg = problem.regularizer();
    let lambda = problem.lambda();
    DVector::from_fn(x.len(), |i, _| {
        let z = x[i] - grad[i] / beta;
        match algorithm {
            Algorithm::Dirl1 => shrink(z, lambda * reg.weight(x[i].abs() + eps[i]) / beta),
            Algorithm::Dirl2 => shrink_l2(z, l2_weight(reg, x[i], eps[i]), beta, lambda),
        }
    })
}

/// One application of the damped map `T` to `(x, ε)`.
pub fn fixed_point_map<R: Penalty>(
    algorithm: Algorithm,
    problem: &Problem<R>,
    params: &MapParams,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let y = subproblem_map(algorithm, problem, params.beta, x, eps);
    let x_next = x * (1.0 - params.alpha) + y * params.alpha;
    (x_next, eps * params.eps_factor())
}

/// `‖x − S^x(x, 0)‖_∞`, zero exactly at stationary points.
pub fn fixed_point_residual<R: Penalty>(
    algorithm: Algorithm,
    problem: &Problem<R>,
    beta: f64,
    x: &DVector<f64>,
) -> f64 {
    let zero = DVector::zeros(x.len());
    (x - subproblem_map(algorithm, problem, beta, x, &zero)).amax()
}

/// Working state of an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub k: usize,
    pub x: DVector<f64>,
    pub eps: DVector<f64>,
    /// Subproblem solution that produced `x` (equals `x` for the initial state).
    pub y: DVector<f64>,
    pub f_perturbed: f64,
    /// `‖x^k − x^{k−1}‖_∞`.
    pub step_norm: f64,
    /// `‖x^k − x^{k−1}‖²`.
    pub step_norm_sq: f64,
}

impl IterateState {
    pub fn initial<R: Penalty>(config: &SolverConfig, problem: &Problem<R>, x0: &DVector<f64>) -> Result<Self> {
        let n = problem.dimension();
        check_len("initial point", n, x0.len())?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial point has a non-finite entry".into()));
        }
        let eps = config.eps0.to_vector(n)?;
        let f_perturbed = perturbed_value(config.algorithm, problem, x0, &eps);
        Ok(Self {
            k: 0,
            x: x0.clone(),
            eps,
            y: x0.clone(),
            f_perturbed,
            step_norm: 0.0,
            step_norm_sq: 0.0,
        })
    }
}

fn perturbed_value<R: Penalty>(
    algorithm: Algorithm,
    problem: &Problem<R>,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> f64 {
    match algorithm {
        Algorithm::Dirl1 => problem.perturbed_l1_unchecked(x, eps),
        Algorithm::Dirl2 => problem.perturbed_l2_unchecked(x, eps),
    }
}

fn damped_step<R: Penalty>(
    algorithm: Algorithm,
    state: &IterateState,
    config: &SolverConfig,
    problem: &Problem<R>,
) -> Result<IterateState> {
    if config.algorithm != algorithm {
        return Err(Error::InvalidArgument(format!(
            "{algorithm} step called with a {} configuration",
            config.algorithm
        )));
    }
    let alpha = config.alpha;
    let grad = problem.smooth().gradient(&state.x);
    let y = subproblem_with_gradient(algorithm, problem, config.beta, &state.x, &state.eps, &grad);
    let x = &state.x * (1.0 - alpha) + &y * alpha;
    let eps = &state.eps * config.map_params().eps_factor();
    let f_perturbed = perturbed_value(algorithm, problem, &x, &eps);
    let k = state.k + 1;

    if !f_perturbed.is_finite() {
        return Err(Error::numerical(Some(k), "perturbed objective is not finite"));
    }
    let allowed = state.f_perturbed + DESCENT_SLACK * state.f_perturbed.abs().max(1.0);
    if f_perturbed > allowed {
        return Err(Error::numerical(
            Some(k),
            format!(
                "descent violated: F went from {} to {} (increase {:.3e})",
                state.f_perturbed,
                f_perturbed,
                f_perturbed - state.f_perturbed
            ),
        ));
    }
    let step = &x - &state.x;
    Ok(IterateState {
        k,
        step_norm: step.amax(),
        step_norm_sq: step.norm_squared(),
        x,
        eps,
        y,
        f_perturbed,
    })
}

/// One DIRL₁ iteration: reweight, soft-threshold, damp, shrink ε.
pub fn dirl1_step<R: Penalty>(
    state: &IterateState,
    config: &SolverConfig,
    problem: &Problem<R>,
) -> Result<IterateState> {
    damped_step(Algorithm::Dirl1, state, config, problem)
}

/// One DIRL₂ iteration: reweight, weighted shrink, damp, shrink ε.
pub fn dirl2_step<R: Penalty>(
    state: &IterateState,
    config: &SolverConfig,
    problem: &Problem<R>,
) -> Result<IterateState> {
    damped_step(Algorithm::Dirl2, state, config, problem)
}

/// Runs the configured algorithm from `x0`.
///
/// Stops once the last [`PATIENCE`] steps all have `‖Δx‖_∞ <= tol_step` and
/// `‖ε‖_∞ <= tol_eps`, or after `max_iter` iterations.
pub fn run<R: Penalty>(config: &SolverConfig, problem: &Problem<R>, x0: &DVector<f64>) -> Result<SolveTrace> {
    validate_config(config, problem)?;
    let mut state = IterateState::initial(config, problem, x0)?;
    let mut recorder = trace::Recorder::new(config, problem);
    recorder.push(&state, sign_fingerprint(&state.x), true);

    let mut small_steps = 0usize;
    let mut converged = false;
    for _ in 0..config.max_iter {
        state = damped_step(config.algorithm, &state, config, problem)?;
        let fingerprint = sign_fingerprint(&state.y);
        small_steps = if state.step_norm <= config.tol_step {
            small_steps + 1
        } else {
            0
        };
        converged = small_steps >= PATIENCE && state.eps.amax() <= config.tol_eps;
        let last = converged || state.k == config.max_iter;
        recorder.push(&state, fingerprint, last);
        if converged {
            break;
        }
    }
    Ok(recorder.finish(state, converged))
}

fn sign_fingerprint(v: &DVector<f64>) -> String {
    v.iter()
        .map(|&x| match sign_at(x, DEFAULT_SUPPORT_TOL) {
            1 => '+',
            -1 => '-',
            _ => '0',
        })
        .collect()
}

/// Limit estimate, its support and the stationarity report from the tail of
/// a run.
pub(crate) fn summarize_limit<R: Penalty>(
    problem: &Problem<R>,
    tail: &[DVector<f64>],
) -> (DVector<f64>, analysis::SupportPattern, analysis::StationarityReport) {
    let pattern = analysis::extrapolated_support(tail, DEFAULT_SUPPORT_TOL).expect("tail is never empty");
    let mut limit = tail.last().expect("tail is never empty").clone();
    for &i in &pattern.inactive {
        limit[i] = 0.0;
    }
    let grad = problem.smooth().gradient(&limit);
    let report = analysis::stationarity_on_pattern(problem, &limit, &grad, pattern.clone(), DEFAULT_RESIDUAL_TOL);
    (limit, pattern, report)
}
