//! Jacobians of the damped fixed-point maps.
//!
//! At a stationary point `(x*, 0)` the Jacobian of `T` is block upper
//! triangular in the ordering `(x_I, x_J, ε)`:
//!
//! ```text
//! DT = [ B    C       E      ]
//!      [ 0  (1−α)I    0      ]
//!      [ 0    0    (1−α(1−μ))I ]
//! ```
//!
//! so its spectrum is `eig(B)` plus the two structural values. For DIRL₁
//! `B = I − (α/β)∇²_{II}F`, for DIRL₂ `B = I − (α/β)P⁻¹∇²_{II}F` with the
//! positive diagonal `P_ii = 1 + (λ/β) r'(|x_i|)/|x_i|`. The DIRL₂ block is
//! diagonalized through the congruence `P^{-1/2}∇²F P^{-1/2}`, which shares
//! its spectrum.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{
    classify_stationary_point, restricted_hessian, stationarity_residual, symmetric_eigen, Classification,
    ClassifyOptions, SaddleReport, DEFAULT_SUPPORT_TOL,
};
use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::Penalty;
use crate::solvers::{fixed_point_map, Algorithm, MapParams};

/// Stationarity gate for the block formulas.
pub const STATIONARY_TOL: f64 = 1e-6;

/// Block form of `DT(x*, 0)` and its spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointJacobian {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    /// `∂T_I/∂x_I`, row-major.
    pub diag_block: Vec<Vec<f64>>,
    /// `∂T_I/∂x_J`, row-major.
    pub off_block: Vec<Vec<f64>>,
    /// `∂T_I/∂ε` (`|I| × n`), row-major.
    pub eps_block: Vec<Vec<f64>>,
    /// `1 − α`, repeated `|J|` times in the spectrum.
    pub scalar_inactive: f64,
    /// `1 − α(1 − μ)`, repeated `n` times in the spectrum.
    pub scalar_eps: f64,
    /// Eigenvalues of `diag_block`, ascending.
    pub block_eigenvalues: Vec<f64>,
    /// Full spectrum of `DT`, ascending, as `{re, im}` pairs.
    pub spectrum: Vec<Eigenvalue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl FixedPointJacobian {
    pub fn dimension(&self) -> usize {
        self.active.len() + self.inactive.len()
    }

    /// Dense `2n × 2n` matrix in the original `(x, ε)` coordinate order.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for (a, &i) in self.active.iter().enumerate() {
            for (b, &j) in self.active.iter().enumerate() {
                m[(i, j)] = self.diag_block[a][b];
            }
            for (b, &j) in self.inactive.iter().enumerate() {
                m[(i, j)] = self.off_block[a][b];
            }
            for j in 0..n {
                m[(i, n + j)] = self.eps_block[a][j];
            }
        }
        for &j in &self.inactive {
            m[(j, j)] = self.scalar_inactive;
        }
        for j in 0..n {
            m[(n + j, n + j)] = self.scalar_eps;
        }
        m
    }

    pub fn spectral_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.spectrum.iter().map(|e| e.re)
    }

    /// Largest `|λ|` over the support block, `None` on an empty support.
    pub fn max_block_modulus(&self) -> Option<f64> {
        self.block_eigenvalues.iter().map(|v| v.abs()).reduce(f64::max)
    }

    pub fn min_modulus(&self) -> f64 {
        self.spectral_values().map(f64::abs).fold(f64::INFINITY, f64::min)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_stationary<R: Penalty>(prob: &Problem<R>, x_star: &DVector<f64>) -> Result<crate::analysis::SupportPattern> {
    let report = stationarity_residual(prob, x_star, DEFAULT_SUPPORT_TOL, STATIONARY_TOL)?;
    if !report.is_stationary {
        return Err(Error::NotStationary {
            residual: report.residual_active,
            margin: report.margin_inactive,
        });
    }
    Ok(report.support)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    algorithm: Algorithm,
    params: &MapParams,
    n: usize,
    pattern: crate::analysis::SupportPattern,
    diag_block: DMatrix<f64>,
    off_block: DMatrix<f64>,
    eps_block: DMatrix<f64>,
    block_eigenvalues: Vec<f64>,
) -> FixedPointJacobian {
    let scalar_inactive = 1.0 - params.alpha;
    let scalar_eps = 1.0 - params.alpha * (1.0 - params.mu);
    let mut values = block_eigenvalues.clone();
    values.extend(std::iter::repeat_n(scalar_inactive, pattern.inactive.len()));
    values.extend(std::iter::repeat_n(scalar_eps, n));
    values.sort_by(f64::total_cmp);
    FixedPointJacobian {
        algorithm,
        alpha: params.alpha,
        beta: params.beta,
        mu: params.mu,
        active: pattern.active,
        inactive: pattern.inactive,
        diag_block: rows(&diag_block),
        off_block: rows(&off_block),
        eps_block: rows(&eps_block),
        scalar_inactive,
        scalar_eps,
        block_eigenvalues,
        spectrum: values.into_iter().map(|re| Eigenvalue { re, im: 0.0 }).collect(),
    }
}

/// `DT(x*, 0)` for DIRL₁.
pub fn dirl1_jacobian<R: Penalty>(
    prob: &Problem<R>,
    x_star: &DVector<f64>,
    alpha: f64,
    beta: f64,
    mu: f64,
) -> Result<FixedPointJacobian> {
    let params = MapParams::new(alpha, beta, mu);
    let pattern = check_stationary(prob, x_star)?;
    let n = prob.dimension();
    let hess_f = prob.hessian();
    let hess_f_restricted = restricted_hessian(prob, x_star, &pattern)?;
    let (act, inact) = (&pattern.active, &pattern.inactive);
    let step = alpha / beta;

    let diag_block = DMatrix::identity(act.len(), act.len()) - &hess_f_restricted * step;
    let off_block = DMatrix::from_fn(act.len(), inact.len(), |a, b| -step * hess_f[(act[a], inact[b])]);
    let reg = prob.regularizer();
    let eps_block = DMatrix::from_fn(act.len(), n, |a, j| {
        let i = act[a];
        if i == j {
            -step * prob.lambda() * x_star[i].signum() * reg.eval_second_derivative(x_star[i].abs())
        } else {
            0.0
        }
    });
    let eig = symmetric_eigen(&hess_f_restricted)?;
    let mut block_eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 - step * l).collect();
    block_eigenvalues.sort_by(f64::total_cmp);
    Ok(assemble(
        Algorithm::Dirl1,
        &params,
        n,
        pattern,
        diag_block,
        off_block,
        eps_block,
        block_eigenvalues,
    ))
}

/// Diagonal `P_ii = 1 + (λ/β) r'(|x_i|)/|x_i| = 1 + (2λ/β) u_i` over the support.
fn dirl2_scaling<R: Penalty>(prob: &Problem<R>, x_star: &DVector<f64>, active: &[usize], beta: f64) -> DVector<f64> {
    let reg = prob.regularizer();
    DVector::from_iterator(
        active.len(),
        active.iter().map(|&i| {
            let t = x_star[i].abs();
            1.0 + prob.lambda() / beta * reg.eval_derivative(t) / t
        }),
    )
}

/// `DT(x*, 0)` for DIRL₂.
pub fn dirl2_jacobian<R: Penalty>(
    prob: &Problem<R>,
    x_star: &DVector<f64>,
    alpha: f64,
    beta: f64,
    mu: f64,
) -> Result<FixedPointJacobian> {
    let params = MapParams::new(alpha, beta, mu);
    let pattern = check_stationary(prob, x_star)?;
    if prob.regularizer().derivative_at_zero_plus().is_finite() && !pattern.inactive.is_empty() {
        return Err(Error::Precondition(
            "DIRL2 fixed points with zero coordinates need an unbounded regularizer slope at 0".into(),
        ));
    }
    let n = prob.dimension();
    let hess_f = prob.hessian();
    let hess_restricted = restricted_hessian(prob, x_star, &pattern)?;
    let (act, inact) = (&pattern.active, &pattern.inactive);
    let scaling = dirl2_scaling(prob, x_star, act, beta);
    let step = alpha / beta;

    let diag_block = DMatrix::identity(act.len(), act.len())
        - DMatrix::from_fn(act.len(), act.len(), |a, b| step * hess_restricted[(a, b)] / scaling[a]);
    let off_block = DMatrix::from_fn(act.len(), inact.len(), |a, b| {
        -step * hess_f[(act[a], inact[b])] / scaling[a]
    });
    let eps_block = DMatrix::zeros(act.len(), n);

    let inv_sqrt = scaling.map(|p| 1.0 / p.sqrt());
    let congruent = DMatrix::from_fn(act.len(), act.len(), |a, b| {
        inv_sqrt[a] * hess_restricted[(a, b)] * inv_sqrt[b]
    });
    let eig = symmetric_eigen(&congruent)?;
    let mut block_eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 - step * l).collect();
    block_eigenvalues.sort_by(f64::total_cmp);
    Ok(assemble(
        Algorithm::Dirl2,
        &params,
        n,
        pattern,
        diag_block,
        off_block,
        eps_block,
        block_eigenvalues,
    ))
}

pub fn fixed_point_jacobian<R: Penalty>(
    algorithm: Algorithm,
    prob: &Problem<R>,
    x_star: &DVector<f64>,
    params: &MapParams,
) -> Result<FixedPointJacobian> {
    match algorithm {
        Algorithm::Dirl1 => dirl1_jacobian(prob, x_star, params.alpha, params.beta, params.mu),
        Algorithm::Dirl2 => dirl2_jacobian(prob, x_star, params.alpha, params.beta, params.mu),
    }
}

/// Distance of a DIRL₁ point from the nearest soft-threshold kink,
/// `min_i ||z_i| − w_i|`, together with `min_i |x_i|` over thresholded-through
/// coordinates.
pub fn dirl1_kink_distance<R: Penalty>(prob: &Problem<R>, beta: f64, x: &DVector<f64>, eps: &DVector<f64>) -> f64 {
    let grad = prob.smooth().gradient(x);
    let reg = prob.regularizer();
    (0..x.len())
        .map(|i| {
            let z = x[i] - grad[i] / beta;
            let w = prob.lambda() * reg.weight(x[i].abs() + eps[i]) / beta;
            let gap = (z.abs() - w).abs();
            if z.abs() > w {
                gap.min(x[i].abs())
            } else {
                gap
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Analytic Jacobian of `T` at a general point `(x, ε)` where the map is
/// differentiable, as a `2n × 2n` matrix in `(x, ε)` order.
pub fn map_jacobian<R: Penalty>(
    algorithm: Algorithm,
    prob: &Problem<R>,
    params: &MapParams,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = prob.dimension();
    if x.len() != n || eps.len() != n {
        return Err(Error::DimensionMismatch {
            context: "map_jacobian",
            expected: n,
            got: x.len().min(eps.len()),
        });
    }
    let ds = match algorithm {
        Algorithm::Dirl1 => dirl1_subproblem_jacobian(prob, params.beta, x, eps)?,
        Algorithm::Dirl2 => dirl2_subproblem_jacobian(prob, params.beta, x, eps)?,
    };
    let alpha = params.alpha;
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..2 * n {
            jac[(i, j)] = alpha * ds[(i, j)];
        }
        jac[(i, i)] += 1.0 - alpha;
        jac[(n + i, n + i)] = params.eps_factor();
    }
    Ok(jac)
}

/// `∂S^x/∂(x, ε)` for DIRL₁ (`n × 2n`).
fn dirl1_subproblem_jacobian<R: Penalty>(
    prob: &Problem<R>,
    beta: f64,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let grad = prob.smooth().gradient(x);
    let hess = prob.hessian();
    let reg = prob.regularizer();
    let c = prob.lambda() / beta;
    let mut ds = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        let t = x[i].abs() + eps[i];
        let z = x[i] - grad[i] / beta;
        let w = c * reg.weight(t);
        if z.abs() == w || (z.abs() > w && x[i] == 0.0) {
            return Err(Error::Precondition(format!(
                "DIRL1 map is not differentiable at coordinate {i}"
            )));
        }
        if z.abs() < w {
            continue;
        }
        let curvature = c * z.signum() * reg.eval_second_derivative(t);
        for j in 0..n {
            ds[(i, j)] = -hess[(i, j)] / beta;
        }
        ds[(i, i)] += 1.0 - curvature * x[i].signum();
        ds[(i, n + i)] = -curvature;
    }
    Ok(ds)
}

/// `∂S^x/∂(x, ε)` for DIRL₂ (`n × 2n`), using
/// `S_i = g(z_i)(x_i − ∇_i f/β)`, `g(z) = z / (z + (λ/β) r'(z))`.
fn dirl2_subproblem_jacobian<R: Penalty>(
    prob: &Problem<R>,
    beta: f64,
    x: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let grad = prob.smooth().gradient(x);
    let hess = prob.hessian();
    let reg = prob.regularizer();
    let c = prob.lambda() / beta;
    let mut ds = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        let z = x[i].hypot(eps[i]);
        if z == 0.0 {
            // g and g' vanish at 0 when r'(0+) = ∞; otherwise S_i has a kink
            if reg.derivative_at_zero_plus().is_finite() {
                return Err(Error::Precondition(format!(
                    "DIRL2 map is not differentiable at coordinate {i}"
                )));
            }
            continue;
        }
        let slope = reg.eval_derivative(z);
        let denom = z + c * slope;
        let g = z / denom;
        let dg = c * (slope - z * reg.eval_second_derivative(z)) / (denom * denom);
        let q = x[i] - grad[i] / beta;
        for j in 0..n {
            ds[(i, j)] = -g * hess[(i, j)] / beta;
        }
        ds[(i, i)] += g + x[i] / z * dg * q;
        ds[(i, n + i)] = eps[i] / z * dg * q;
    }
    Ok(ds)
}

/// Finite-difference step for one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    Central(f64),
    /// One-sided, for columns at the boundary of the domain (ε = 0).
    Forward(f64),
}

/// Central differences `(map(p + h e_j) − map(p − h e_j)) / 2h`, column by column.
pub fn finite_difference_jacobian<F>(map: F, point: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    finite_difference_jacobian_with(map, point, &vec![FdStep::Central(h); point.len()])
}

pub fn finite_difference_jacobian_with<F>(map: F, point: &DVector<f64>, steps: &[FdStep]) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if steps.len() != point.len() {
        return Err(Error::DimensionMismatch {
            context: "finite_difference_jacobian",
            expected: point.len(),
            got: steps.len(),
        });
    }
    let base = map(point);
    let mut jac = DMatrix::zeros(base.len(), point.len());
    for (j, step) in steps.iter().enumerate() {
        let h = match step {
            FdStep::Central(h) | FdStep::Forward(h) => *h,
        };
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step for column {j} must be positive"
            )));
        }
        let mut plus = point.clone();
        plus[j] += h;
        let column = match step {
            FdStep::Central(_) => {
                let mut minus = point.clone();
                minus[j] -= h;
                (map(&plus) - map(&minus)) / (2.0 * h)
            }
            FdStep::Forward(_) => (map(&plus) - &base) / h,
        };
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                None,
                format!("finite-difference column {j} is not finite"),
            ));
        }
        jac.set_column(j, &column);
    }
    Ok(jac)
}

/// `T` as a function on the stacked vector `(x, ε) ∈ R^{2n}`.
pub fn stacked_map<'a, R: Penalty>(
    algorithm: Algorithm,
    prob: &'a Problem<R>,
    params: MapParams,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    move |p: &DVector<f64>| {
        let n = p.len() / 2;
        let x = p.rows(0, n).into_owned();
        let eps = p.rows(n, n).into_owned();
        let (xn, en) = fixed_point_map(algorithm, prob, &params, &x, &eps);
        DVector::from_iterator(2 * n, xn.iter().chain(en.iter()).copied())
    }
}

/// `true` iff some eigenvalue has modulus above `1 + delta`.
pub fn unstable_fixed_point_check(jac: &FixedPointJacobian, delta: f64) -> bool {
    jac.spectrum.iter().any(|e| e.re.hypot(e.im) > 1.0 + delta)
}

/// Cross-check of the second-order classification against the linear
/// stability of the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub algorithm: Algorithm,
    pub saddle: SaddleReport,
    pub jacobian: FixedPointJacobian,
    pub unstable: bool,
    /// Largest modulus over the support block (non-structural eigenvalues).
    pub max_block_modulus: Option<f64>,
    /// `ρ` used for the `α < β/ρ` gate.
    pub rho: f64,
    /// Whether `α < β/ρ`, under which local minima must be linearly stable.
    pub stability_gate: bool,
    pub invertible: bool,
    pub consistent: bool,
    pub mismatch: Option<String>,
}

pub fn saddle_unstable_equivalence<R: Penalty>(
    prob: &Problem<R>,
    x_star: &DVector<f64>,
    params: &MapParams,
    algorithm: Algorithm,
    rho_empirical: Option<f64>,
) -> Result<EquivalenceReport> {
    let opts = ClassifyOptions {
        tol_residual: STATIONARY_TOL,
        ..ClassifyOptions::default()
    };
    let saddle = classify_stationary_point(prob, x_star, &opts)?;
    let jacobian = fixed_point_jacobian(algorithm, prob, x_star, params)?;
    let unstable = unstable_fixed_point_check(&jacobian, 1e-10);
    let rho = rho_empirical.unwrap_or(saddle.rho).max(saddle.rho);
    let stability_gate = params.alpha * rho < params.beta;
    let max_block_modulus = jacobian.max_block_modulus();

    let mismatch = match saddle.classification {
        Classification::StrictSaddle if !unstable => {
            Some("strict saddle but every eigenvalue of DT has modulus <= 1".to_string())
        }
        Classification::StrictLocalMin if stability_gate && max_block_modulus.is_some_and(|m| m >= 1.0) => {
            Some(format!(
                "strict local minimum with alpha < beta/rho but support-block modulus {:.6} >= 1",
                max_block_modulus.unwrap_or_default()
            ))
        }
        _ => None,
    };
    Ok(EquivalenceReport {
        algorithm,
        invertible: jacobian.min_modulus() > 1e-10,
        saddle,
        jacobian,
        unstable,
        max_block_modulus,
        rho,
        stability_gate,
        consistent: mismatch.is_none(),
        mismatch,
    })
}

/// Empirical Lipschitz constant of `S` over sample points, taken as the
/// largest spectral norm of its finite-difference Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub lipschitz: f64,
    /// `1 / (1 + L_S)`.
    pub alpha_bound: f64,
    pub alpha_within_bound: bool,
}

pub fn empirical_subproblem_lipschitz<R: Penalty>(
    algorithm: Algorithm,
    prob: &Problem<R>,
    params: &MapParams,
    points: &[(DVector<f64>, DVector<f64>)],
    h: f64,
) -> Result<LipschitzEstimate> {
    let mu = params.mu;
    let s_map = |p: &DVector<f64>| {
        let n = p.len() / 2;
        let x = p.rows(0, n).into_owned();
        let eps = p.rows(n, n).into_owned();
        let y = crate::solvers::subproblem_map(algorithm, prob, params.beta, &x, &eps);
        DVector::from_iterator(2 * n, y.iter().copied().chain(eps.iter().map(|e| mu * e)))
    };
    let mut lipschitz: f64 = 0.0;
    for (x, eps) in points {
        let n = x.len();
        let p = DVector::from_iterator(2 * n, x.iter().chain(eps.iter()).copied());
        let steps: Vec<FdStep> = (0..2 * n)
            .map(|j| {
                if j >= n && eps[j - n] < h {
                    FdStep::Forward(h)
                } else {
                    FdStep::Central(h)
                }
            })
            .collect();
        let jac = finite_difference_jacobian_with(s_map, &p, &steps)?;
        let gram = jac.tr_mul(&jac);
        let top = symmetric_eigen(&gram)?.max().unwrap_or(0.0);
        lipschitz = lipschitz.max(top.max(0.0).sqrt());
    }
    let alpha_bound = 1.0 / (1.0 + lipschitz);
    Ok(LipschitzEstimate {
        lipschitz,
        alpha_bound,
        alpha_within_bound: params.alpha < alpha_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{benchmark2d, SmoothTerm};
    use crate::regularizers::Regularizer;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn bench_params() -> MapParams {
        MapParams::new(0.2, 4.0, 0.3)
    }

    #[test]
    fn dirl1_blocks_at_benchmark_points() {
        let p = Problem::benchmark2d();
        let jac = dirl1_jacobian(&p, &v(&benchmark2d::MINIMUM), 0.2, 4.0, 0.3).unwrap();
        assert_eq!(jac.active, vec![1]);
        assert_relative_eq!(jac.block_eigenvalues[0], 1.0 - 0.05 * 1.75, epsilon = 1e-12);
        assert_relative_eq!(jac.block_eigenvalues[0], 0.9125, epsilon = 1e-12);
        assert_eq!(jac.scalar_inactive, 0.8);
        assert_relative_eq!(jac.scalar_eps, 0.86);
        let spectrum: Vec<f64> = jac.spectral_values().collect();
        assert_eq!(spectrum.len(), 4);
        assert!(!unstable_fixed_point_check(&jac, 1e-10));

        let s = benchmark2d::saddle_x2();
        let jac = dirl1_jacobian(&p, &v(&benchmark2d::saddle()), 0.2, 4.0, 0.3).unwrap();
        let lam = 2.0 - 0.25 * s.powf(-1.5);
        assert_relative_eq!(jac.block_eigenvalues[0], 1.0 - 0.05 * lam, epsilon = 1e-10);
        assert_relative_eq!(jac.block_eigenvalues[0], 2.307, epsilon = 1e-3);
        assert!(unstable_fixed_point_check(&jac, 1e-10));

        assert!(matches!(
            dirl1_jacobian(&p, &v(&[1.0, 1.0]), 0.2, 4.0, 0.3),
            Err(Error::NotStationary { .. })
        ));
    }

    #[test]
    fn dirl2_blocks_at_benchmark_points() {
        let p = Problem::benchmark2d();
        // P = 1 + (λ/β) r'(1)/1 = 1 + 0.5/4
        let jac = dirl2_jacobian(&p, &v(&benchmark2d::MINIMUM), 0.2, 4.0, 0.3).unwrap();
        let scale = 1.0 + 0.5 / 4.0;
        assert_relative_eq!(jac.block_eigenvalues[0], 1.0 - 0.05 * 1.75 / scale, epsilon = 1e-12);
        assert!(!unstable_fixed_point_check(&jac, 1e-10));

        let s = benchmark2d::saddle_x2();
        let jac = dirl2_jacobian(&p, &v(&benchmark2d::saddle()), 0.2, 4.0, 0.3).unwrap();
        let scale = 1.0 + 0.25 * 0.5 * s.powf(-0.5) / s;
        let lam = 2.0 - 0.25 * s.powf(-1.5);
        assert_relative_eq!(jac.block_eigenvalues[0], 1.0 - 0.05 * lam / scale, epsilon = 1e-12);
        assert!(jac.block_eigenvalues[0] > 1.0);
        assert!(unstable_fixed_point_check(&jac, 1e-10));
    }

    #[test]
    fn dirl2_rejects_lipschitz_regularizer_with_zeros() {
        let smooth = SmoothTerm::least_squares(DMatrix::identity(2, 2), v(&[0.1, 3.0]), 0.0).unwrap();
        let p = Problem::new(smooth, Regularizer::exp(1.0).unwrap(), 0.5).unwrap();
        // x1 = 0 (|0.1| < λ r'(0) = 0.5); x2 solves x - 3 + 0.5 e^{-x} = 0
        let mut x2: f64 = 3.0;
        for _ in 0..100 {
            x2 = 3.0 - 0.5 * (-x2).exp();
        }
        let x = v(&[0.0, x2]);
        assert!(dirl1_jacobian(&p, &x, 0.2, 4.0, 0.3).is_ok());
        assert!(matches!(
            dirl2_jacobian(&p, &x, 0.2, 4.0, 0.3),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn zero_curvature_gives_unit_eigenvalue() {
        // f = 0 quadratic on one coordinate and λ r'' cancelled by A
        let reg = Regularizer::lpn(0.5).unwrap();
        let a = -reg.eval_second_derivative(1.0);
        let b = -(a + reg.eval_derivative(1.0));
        let smooth = SmoothTerm::quadratic(DMatrix::from_element(1, 1, a), v(&[b]), 0.0).unwrap();
        let p = Problem::new(smooth, reg, 1.0).unwrap();
        for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
            let jac = fixed_point_jacobian(alg, &p, &v(&[1.0]), &bench_params()).unwrap();
            assert_relative_eq!(jac.block_eigenvalues[0], 1.0, epsilon = 1e-15);
            assert!(!unstable_fixed_point_check(&jac, 1e-10));
        }
    }

    #[test]
    fn unstable_check_boundary() {
        let mut jac = dirl1_jacobian(&Problem::benchmark2d(), &v(&benchmark2d::MINIMUM), 0.2, 4.0, 0.3).unwrap();
        jac.spectrum = vec![Eigenvalue { re: 1.0, im: 0.0 }, Eigenvalue { re: 0.5, im: 0.0 }];
        assert!(!unstable_fixed_point_check(&jac, 1e-10));
        jac.spectrum = vec![
            Eigenvalue { re: 0.9125, im: 0.0 },
            Eigenvalue { re: 0.8, im: 0.0 },
            Eigenvalue { re: 0.86, im: 0.0 },
        ];
        assert!(!unstable_fixed_point_check(&jac, 1e-10));
        jac.spectrum.push(Eigenvalue { re: 2.307, im: 0.0 });
        assert!(unstable_fixed_point_check(&jac, 1e-10));
    }

    #[test]
    fn fd_recovers_linear_maps() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 4.0, 0.25]);
        let jac = finite_difference_jacobian(|p| &m * p, &v(&[0.3, -0.7]), 1e-6).unwrap();
        assert!((jac - &m).amax() < 1e-8);
        let err = finite_difference_jacobian(|p| p.map(f64::sqrt), &v(&[0.0]), 1e-6).unwrap_err();
        assert!(err.to_string().contains("column 0"));
    }

    fn smooth_point(rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>) {
        let x = DVector::from_fn(n, |_, _| {
            let m = rng.gen_range(0.1..2.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let eps = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.0));
        (x, eps)
    }

    #[test]
    fn analytic_matches_fd_at_random_points() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let bench = Problem::benchmark2d();
        let a = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let ls = Problem::new(
            SmoothTerm::least_squares(a, b, 0.0).unwrap(),
            Regularizer::log(2.0).unwrap(),
            0.4,
        )
        .unwrap();
        for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
            let mut checked = 0;
            while checked < 20 {
                let (x, eps) = smooth_point(&mut rng, 2);
                if alg == Algorithm::Dirl1 && dirl1_kink_distance(&bench, 4.0, &x, &eps) < 10.0 * h {
                    continue;
                }
                let analytic = map_jacobian(alg, &bench, &bench_params(), &x, &eps).unwrap();
                let point = DVector::from_iterator(4, x.iter().chain(eps.iter()).copied());
                let fd = finite_difference_jacobian(stacked_map(alg, &bench, bench_params()), &point, h).unwrap();
                assert!((&analytic - &fd).amax() <= 1e-5, "{alg}: {}", (&analytic - &fd).amax());
                checked += 1;
            }
            let params = MapParams::new(0.3, 2.0, 0.5);
            for _ in 0..10 {
                let (x, eps) = smooth_point(&mut rng, 3);
                if alg == Algorithm::Dirl1 && dirl1_kink_distance(&ls, params.beta, &x, &eps) < 10.0 * h {
                    continue;
                }
                let analytic = map_jacobian(alg, &ls, &params, &x, &eps).unwrap();
                let point = DVector::from_iterator(6, x.iter().chain(eps.iter()).copied());
                let fd = finite_difference_jacobian(stacked_map(alg, &ls, params), &point, h).unwrap();
                assert!((&analytic - &fd).amax() <= 1e-5, "{alg}: {}", (&analytic - &fd).amax());
            }
        }
    }

    #[test]
    fn stationary_blocks_match_dense_general_formula() {
        // at (x*, 0) the general formula and the block form must coincide on the support rows
        let p = Problem::benchmark2d();
        let params = bench_params();
        for point in [benchmark2d::MINIMUM, benchmark2d::saddle()] {
            let x = v(&point);
            for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
                let blocks = fixed_point_jacobian(alg, &p, &x, &params).unwrap().dense();
                let general = map_jacobian(alg, &p, &params, &x, &DVector::zeros(2)).unwrap();
                assert!(
                    (&blocks - &general).amax() < 1e-12,
                    "{alg} {point:?}\n{blocks}\n{general}"
                );
            }
        }
    }

    #[test]
    fn congruence_preserves_sign_of_lambda_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let n = 1 + trial % 6;
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let shift = rng.gen_range(-1.0..1.5);
            let h = &b + b.transpose() + DMatrix::identity(n, n) * shift;
            let d: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(0.05..20.0));
            let s = DMatrix::from_fn(n, n, |i, j| h[(i, j)] / (d[i] * d[j]).sqrt());
            let lh = symmetric_eigen(&h).unwrap().min().unwrap();
            let ls = symmetric_eigen(&s).unwrap().min().unwrap();
            assert_eq!(lh < 0.0, ls < 0.0, "{lh} vs {ls}");
        }
    }

    #[test]
    fn equivalence_on_benchmark() {
        let p = Problem::benchmark2d();
        for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
            let r = saddle_unstable_equivalence(&p, &v(&benchmark2d::saddle()), &bench_params(), alg, None).unwrap();
            assert_eq!(r.saddle.classification, Classification::StrictSaddle);
            assert!(r.unstable && r.consistent);

            let r = saddle_unstable_equivalence(&p, &v(&benchmark2d::MINIMUM), &bench_params(), alg, None).unwrap();
            assert_eq!(r.saddle.classification, Classification::StrictLocalMin);
            assert!(!r.unstable && r.consistent && r.stability_gate && r.invertible);
            assert!(r.max_block_modulus.unwrap() < 1.0);
        }
    }

    #[test]
    fn subproblem_lipschitz_estimate() {
        let p = Problem::benchmark2d();
        let pts = vec![(v(&[0.5, 1.0]), v(&[0.2, 0.2])), (v(&[0.0, 1.0]), v(&[0.0, 0.0]))];
        let est = empirical_subproblem_lipschitz(Algorithm::Dirl2, &p, &bench_params(), &pts, 1e-6).unwrap();
        assert!(est.lipschitz.is_finite() && est.lipschitz > 0.0);
        assert_relative_eq!(est.alpha_bound, 1.0 / (1.0 + est.lipschitz));
    }
}
