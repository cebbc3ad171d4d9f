//! First- and second-order analysis of candidate limit points: supports,
//! stationarity residuals, restricted Hessians and strict-saddle
//! classification.

mod eigen;

pub use eigen::{symmetric_eigen, SymmetricEigen};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::Penalty;
use crate::solvers::SolveTrace;

pub const DEFAULT_SUPPORT_TOL: f64 = 1e-10;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-6;
pub const DEFAULT_DELTA: f64 = 1e-8;

/// Active set `I(x)`, its complement `J(x)` and the sign pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPattern {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub signs: Vec<i8>,
}

impl SupportPattern {
    pub fn from_signs(signs: Vec<i8>) -> Self {
        let (active, inactive) = (0..signs.len()).partition(|&i| signs[i] != 0);
        Self {
            active,
            inactive,
            signs,
        }
    }

    pub fn dimension(&self) -> usize {
        self.signs.len()
    }

    /// Sign pattern as a string over `{+, -, 0}`.
    pub fn fingerprint(&self) -> String {
        self.signs
            .iter()
            .map(|s| match s {
                1 => '+',
                -1 => '-',
                _ => '0',
            })
            .collect()
    }
}

/// `i` is active iff `|x_i| > tol`.
pub fn support(x: &DVector<f64>, tol: f64) -> SupportPattern {
    SupportPattern::from_signs(x.iter().map(|&v| sign_at(v, tol)).collect())
}

pub(crate) fn sign_at(v: f64, tol: f64) -> i8 {
    if v > tol {
        1
    } else if v < -tol {
        -1
    } else {
        0
    }
}

/// Support of the limit of a sequence whose last iterates are `window`.
///
/// Besides coordinates already below `tol`, a coordinate is declared
/// inactive when its magnitude shrinks by a factor of at most
/// `1 - RATE_GAP` at every step of the window and has fallen under
/// `SMALL`. This catches coordinates that the damped maps contract
/// geometrically to zero but never hit exactly.
pub fn extrapolated_support(window: &[DVector<f64>], tol: f64) -> Result<SupportPattern> {
    const RATE_GAP: f64 = 1e-3;
    const SMALL: f64 = 1e-4;

    let last = window
        .last()
        .ok_or_else(|| Error::InvalidArgument("extrapolated_support needs at least one iterate".into()))?;
    let n = last.len();
    let signs = (0..n)
        .map(|i| {
            let s = sign_at(last[i], tol);
            if s == 0 || window.len() < 2 || last[i].abs() > SMALL {
                return s;
            }
            let decaying = window.windows(2).all(|w| {
                let (prev, next) = (w[0][i], w[1][i]);
                prev.signum() == next.signum() && next.abs() <= (1.0 - RATE_GAP) * prev.abs()
            });
            if decaying {
                0
            } else {
                s
            }
        })
        .collect();
    Ok(SupportPattern::from_signs(signs))
}

/// Residuals of the first-order conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `max_{i∈I} |∇_i f(x) + λ sign(x_i) r'(|x_i|)|` (0 when `I` is empty).
    pub residual_active: f64,
    /// `λ r'(0+) − max_{i∈J} |∇_i f(x)|`; `+∞` when `r'(0+) = ∞` or `J` is empty.
    #[serde(with = "crate::ext_real")]
    pub margin_inactive: f64,
    pub is_stationary: bool,
    pub support: SupportPattern,
}

pub fn stationarity_residual<R: Penalty>(
    prob: &Problem<R>,
    x: &DVector<f64>,
    tol_support: f64,
    tol_residual: f64,
) -> Result<StationarityReport> {
    let pattern = support(x, tol_support);
    let grad = prob.gradient_smooth(x)?;
    Ok(stationarity_on_pattern(prob, x, &grad, pattern, tol_residual))
}

pub(crate) fn stationarity_on_pattern<R: Penalty>(
    prob: &Problem<R>,
    x: &DVector<f64>,
    grad: &DVector<f64>,
    pattern: SupportPattern,
    tol_residual: f64,
) -> StationarityReport {
    let reg = prob.regularizer();
    let lambda = prob.lambda();
    let residual_active = pattern
        .active
        .iter()
        .map(|&i| (grad[i] + lambda * x[i].signum() * reg.eval_derivative(x[i].abs())).abs())
        .fold(0.0, f64::max);
    let slope0 = reg.derivative_at_zero_plus();
    let margin_inactive = if slope0.is_infinite() || pattern.inactive.is_empty() {
        f64::INFINITY
    } else {
        lambda * slope0 - pattern.inactive.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max)
    };
    StationarityReport {
        residual_active,
        margin_inactive,
        is_stationary: residual_active <= tol_residual && margin_inactive > 0.0,
        support: pattern,
    }
}

/// `∇²_{II} f(x) + λ diag(r''(|x_i|))` over the active set.
pub fn restricted_hessian<R: Penalty>(
    prob: &Problem<R>,
    x: &DVector<f64>,
    pattern: &SupportPattern,
) -> Result<DMatrix<f64>> {
    if pattern.dimension() != prob.dimension() {
        return Err(Error::DimensionMismatch {
            context: "restricted_hessian",
            expected: prob.dimension(),
            got: pattern.dimension(),
        });
    }
    let h = prob.hessian_smooth(x)?;
    let idx = &pattern.active;
    let reg = prob.regularizer();
    Ok(DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
        let (i, j) = (idx[a], idx[b]);
        let curvature = if a == b {
            prob.lambda() * reg.eval_second_derivative(x[i].abs())
        } else {
            0.0
        };
        h[(i, j)] + curvature
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    StrictLocalMin,
    StrictSaddle,
    Degenerate,
}

/// Tolerances for [`classify_stationary_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub tol_support: f64,
    pub tol_residual: f64,
    /// Half-width of the band around zero treated as degenerate curvature.
    pub delta: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            tol_support: DEFAULT_SUPPORT_TOL,
            tol_residual: DEFAULT_RESIDUAL_TOL,
            delta: DEFAULT_DELTA,
        }
    }
}

/// Second-order picture at a stationary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub support: SupportPattern,
    /// Row-major restricted Hessian.
    pub restricted_hessian: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// `None` when the support is empty.
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub classification: Classification,
    /// Every direction in the model subspace has negative curvature.
    pub negative_definite: bool,
    /// Spectral norm of the restricted Hessian (empirical `ρ`).
    pub rho: f64,
}

pub fn classify_stationary_point<R: Penalty>(
    prob: &Problem<R>,
    x: &DVector<f64>,
    opts: &ClassifyOptions,
) -> Result<SaddleReport> {
    let report = stationarity_residual(prob, x, opts.tol_support, opts.tol_residual)?;
    if !report.is_stationary {
        return Err(Error::NotStationary {
            residual: report.residual_active,
            margin: report.margin_inactive,
        });
    }
    classify_on_pattern(prob, x, &report.support, opts.delta)
}

/// Classification against an explicitly supplied support.
pub fn classify_on_pattern<R: Penalty>(
    prob: &Problem<R>,
    x: &DVector<f64>,
    pattern: &SupportPattern,
    delta: f64,
) -> Result<SaddleReport> {
    let hess = restricted_hessian(prob, x, pattern)?;
    let eig = symmetric_eigen(&hess)?;
    let (lambda_min, lambda_max) = (eig.min(), eig.max());
    let classification = match lambda_min {
        // the second-order condition is vacuous over an empty support
        None => Classification::StrictLocalMin,
        Some(l) if l > delta => Classification::StrictLocalMin,
        Some(l) if l < -delta => Classification::StrictSaddle,
        Some(_) => Classification::Degenerate,
    };
    let negative_definite = matches!(lambda_max, Some(l) if l < -delta);
    let rho = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SaddleReport {
        support: pattern.clone(),
        restricted_hessian: hess.row_iter().map(|r| r.iter().copied().collect()).collect(),
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        lambda_min,
        lambda_max,
        classification,
        negative_definite,
        rho,
    })
}

/// `true` iff the recorded sign pattern is constant over the last `window`
/// states of the trace.
pub fn check_support_identification(trace: &SolveTrace, window: usize) -> Result<bool> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let states = &trace.states;
    if states.len() < window {
        return Err(Error::InvalidArgument(format!(
            "trace has {} states, fewer than the window of {window}",
            states.len()
        )));
    }
    let tail = &states[states.len() - window..];
    Ok(tail.iter().all(|s| s.support == tail[0].support))
}
