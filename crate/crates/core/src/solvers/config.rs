use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SolveTrace;
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::{check_assumption4, inverse_derivative, Penalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "DIRL1", alias = "dirl1")]
    Dirl1,
    #[serde(rename = "DIRL2", alias = "dirl2")]
    Dirl2,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dirl1 => "DIRL1",
            Algorithm::Dirl2 => "DIRL2",
        })
    }
}

/// How ε shrinks per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsDecay {
    /// `ε⁺ = (1 − α(1 − μ)) ε`, the decay of the analyzed map `T`.
    #[default]
    Damped,
    /// `ε⁺ = μ ε`.
    Geometric,
}

/// Initial perturbation: a scalar broadcast to every coordinate or a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsInit {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl EpsInit {
    pub fn to_vector(&self, n: usize) -> Result<DVector<f64>> {
        match self {
            EpsInit::Scalar(e) => Ok(DVector::from_element(n, *e)),
            EpsInit::Vector(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            EpsInit::Vector(v) => Err(Error::field("eps0", format!("expected {n} entries, got {}", v.len()))),
        }
    }

    fn all_positive(&self) -> bool {
        match self {
            EpsInit::Scalar(e) => *e > 0.0 && e.is_finite(),
            EpsInit::Vector(v) => v.iter().all(|e| *e > 0.0 && e.is_finite()),
        }
    }
}

/// Parameters of the damped map `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub decay: EpsDecay,
}

impl MapParams {
    pub fn new(alpha: f64, beta: f64, mu: f64) -> Self {
        Self {
            alpha,
            beta,
            mu,
            decay: EpsDecay::Damped,
        }
    }

    /// Per-iteration multiplier of ε.
    pub fn eps_factor(&self) -> f64 {
        match self.decay {
            EpsDecay::Damped => 1.0 - self.alpha * (1.0 - self.mu),
            EpsDecay::Geometric => self.mu,
        }
    }
}

/// Algorithm parameters. Missing fields in a config file take the defaults,
/// which are tuned for the 2D benchmark (`L = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub eps0: EpsInit,
    pub eps_decay: EpsDecay,
    pub max_iter: usize,
    pub tol_step: f64,
    pub tol_eps: f64,
    /// Store `x`, `ε` and `y` in every trace record.
    pub record_full: bool,
    /// Record every n-th iteration (the initial and final states are always kept).
    pub record_every: usize,
    /// Lower bound on nonzero magnitudes used for the LPN curvature bound in
    /// the lipeomorphism warning.
    pub lower_bound: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dirl1,
            alpha: 0.2,
            beta: 4.0,
            mu: 0.3,
            eps0: EpsInit::Scalar(1.0),
            eps_decay: EpsDecay::Damped,
            max_iter: 100_000,
            tol_step: 1e-10,
            tol_eps: 1e-10,
            record_full: false,
            record_every: 1,
            lower_bound: None,
        }
    }
}

impl SolverConfig {
    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn map_params(&self) -> MapParams {
        MapParams {
            alpha: self.alpha,
            beta: self.beta,
            mu: self.mu,
            decay: self.eps_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationWarning {
    /// `α(2 + L/β + (λ/β)L_r + μ) >= 1`.
    LipeomorphismViolated { value: f64, curvature_bound: f64 },
    /// The curvature bound is infinite without a lower bound on nonzero magnitudes.
    LipeomorphismUnverifiable,
    /// `α < β/ρ` cannot be checked before stationary points are known.
    InvertibilityUnverified { beta_over_alpha: f64 },
    /// DIRL₂ smoothness needs an unbounded slope at zero.
    Assumption4Fails,
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::LipeomorphismViolated { value, curvature_bound } => write!(
                f,
                "lipeomorphism inequality fails: alpha(2 + L/beta + lambda L_r/beta + mu) = {value:.4} >= 1 (L_r = {curvature_bound:.4})"
            ),
            ValidationWarning::LipeomorphismUnverifiable => {
                f.write_str("lipeomorphism inequality unverifiable: regularizer curvature is unbounded near 0 (set lower_bound)")
            }
            ValidationWarning::InvertibilityUnverified { beta_over_alpha } => write!(
                f,
                "invertibility needs rho < beta/alpha = {beta_over_alpha:.4}; rho is only known after classification"
            ),
            ValidationWarning::Assumption4Fails => {
                f.write_str("DIRL2 local smoothness is not guaranteed: regularizer slope at 0 is finite")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub lipschitz_gradient: f64,
    /// `α(2 + L/β + (λ/β)L_r + μ)` when `L_r` is finite.
    pub lipeomorphism_value: Option<f64>,
    pub warnings: Vec<ValidationWarning>,
}

fn lipeomorphism_value(config: &SolverConfig, lipschitz: f64, lambda: f64, curvature: f64) -> f64 {
    config.alpha * (2.0 + lipschitz / config.beta + lambda / config.beta * curvature + config.mu)
}

/// Hard checks (`0<α<1`, `0<μ<1`, `β > αL/2`, `ε⁰ > 0`) and advisory
/// warnings. Hard violations are returned as [`Error::InvalidConfig`].
pub fn validate_config<R: Penalty>(config: &SolverConfig, problem: &Problem<R>) -> Result<ValidationReport> {
    let lipschitz = problem.estimate_lipschitz_gradient();
    let mut errors = Vec::new();
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        errors.push(format!("alpha must lie in (0, 1), got {}", config.alpha));
    }
    if !(config.mu > 0.0 && config.mu < 1.0) {
        errors.push(format!("mu must lie in (0, 1), got {}", config.mu));
    }
    if !(config.beta > config.alpha * lipschitz / 2.0) || !config.beta.is_finite() {
        errors.push(format!(
            "beta must exceed alpha*L/2 = {} (L = {lipschitz}), got {}",
            config.alpha * lipschitz / 2.0,
            config.beta
        ));
    }
    if !config.eps0.all_positive() {
        errors.push("eps0 must be positive and finite in every coordinate".to_string());
    }
    if let Err(e) = config.eps0.to_vector(problem.dimension()) {
        errors.push(e.to_string());
    }
    if config.max_iter > 0 && !(config.tol_step > 0.0 && config.tol_eps > 0.0) {
        errors.push("tol_step and tol_eps must be positive".to_string());
    }
    if config.record_every == 0 {
        errors.push("record_every must be at least 1".to_string());
    }
    if !errors.is_empty() {
        return Err(Error::InvalidConfig { errors });
    }

    let reg = problem.regularizer();
    let mut warnings = Vec::new();
    let curvature = match config.lower_bound {
        Some(lb) if lb > 0.0 => reg.curvature_bound(lb),
        _ => reg.curvature_bound(0.0),
    };
    let lipeomorphism_value = if curvature.is_finite() {
        let value = lipeomorphism_value(config, lipschitz, problem.lambda(), curvature);
        if value >= 1.0 {
            warnings.push(ValidationWarning::LipeomorphismViolated {
                value,
                curvature_bound: curvature,
            });
        }
        Some(value)
    } else {
        warnings.push(ValidationWarning::LipeomorphismUnverifiable);
        None
    };
    warnings.push(ValidationWarning::InvertibilityUnverified {
        beta_over_alpha: config.beta / config.alpha,
    });
    if config.algorithm == super::Algorithm::Dirl2 {
        let seq: Vec<f64> = (1..=12).map(|k| 10f64.powi(-k)).collect();
        let holds = check_assumption4(reg, &seq).map(|r| r.holds).unwrap_or(false);
        if !holds {
            warnings.push(ValidationWarning::Assumption4Fails);
        }
    }
    Ok(ValidationReport {
        lipschitz_gradient: lipschitz,
        lipeomorphism_value,
        warnings,
    })
}

/// Lipeomorphism inequality evaluated after a run, with the curvature bound
/// taken at `x̲ = (r')⁻¹(C/λ)` and `C = max_k ‖x^k − ∇f(x^k)/β‖_∞`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipeomorphismReport {
    pub gradient_step_bound: f64,
    pub magnitude_lower_bound: f64,
    pub curvature_bound: f64,
    pub value: f64,
    pub satisfied: bool,
}

pub fn lipeomorphism_report<R: Penalty>(
    config: &SolverConfig,
    problem: &Problem<R>,
    trace: &SolveTrace,
) -> LipeomorphismReport {
    let reg = problem.regularizer();
    let c = trace.gradient_step_bound;
    let lower = if reg.derivative_at_zero_plus().is_finite() {
        0.0
    } else {
        inverse_derivative(reg, c / problem.lambda())
    };
    let curvature = reg.curvature_bound(lower);
    let value = lipeomorphism_value(
        config,
        problem.estimate_lipschitz_gradient(),
        problem.lambda(),
        curvature,
    );
    LipeomorphismReport {
        gradient_step_bound: c,
        magnitude_lower_bound: lower,
        curvature_bound: curvature,
        value,
        satisfied: value < 1.0,
    }
}
