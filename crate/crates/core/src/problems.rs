//! Composite objectives `F(x) = f(x) + λ Σ r(|x_i|)` with a smooth term of
//! constant Hessian, plus the two ε-perturbed surrogates used by the solvers.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizers::{Penalty, Regularizer};

const SYMMETRY_TOL: f64 = 1e-12;

/// Smooth part `f` of the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothTerm {
    /// `f(x) = ½ xᵀAx + bᵀx + c` with `A` symmetric.
    Quadratic { a: DMatrix<f64>, b: DVector<f64>, c: f64 },
    /// `f(x) = ½ ‖Ax − b‖² + c`.
    LeastSquares { a: DMatrix<f64>, b: DVector<f64>, c: f64 },
}

impl SmoothTerm {
    pub fn quadratic(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::field(
                "A",
                format!("quadratic term needs a square matrix, got {}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.len() != a.nrows() {
            return Err(Error::field(
                "b",
                format!("expected length {}, got {}", a.nrows(), b.len()),
            ));
        }
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::field("A", "quadratic term matrix is not symmetric"));
        }
        check_finite("A", a.iter())?;
        check_finite("b", b.iter())?;
        check_finite("c", std::iter::once(&c))?;
        Ok(SmoothTerm::Quadratic { a, b, c })
    }

    pub fn least_squares(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if a.ncols() == 0 {
            return Err(Error::field("A", "least squares matrix has no columns"));
        }
        if b.len() != a.nrows() {
            return Err(Error::field(
                "b",
                format!("expected length {}, got {}", a.nrows(), b.len()),
            ));
        }
        check_finite("A", a.iter())?;
        check_finite("b", b.iter())?;
        check_finite("c", std::iter::once(&c))?;
        Ok(SmoothTerm::LeastSquares { a, b, c })
    }

    pub fn dimension(&self) -> usize {
        match self {
            SmoothTerm::Quadratic { a, .. } | SmoothTerm::LeastSquares { a, .. } => a.ncols(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            SmoothTerm::Quadratic { a, b, c } => 0.5 * x.dot(&(a * x)) + b.dot(x) + c,
            SmoothTerm::LeastSquares { a, b, c } => 0.5 * (a * x - b).norm_squared() + c,
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SmoothTerm::Quadratic { a, b, .. } => a * x + b,
            SmoothTerm::LeastSquares { a, b, .. } => a.tr_mul(&(a * x - b)),
        }
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        match self {
            SmoothTerm::Quadratic { a, .. } => a.clone(),
            SmoothTerm::LeastSquares { a, .. } => a.tr_mul(a),
        }
    }

    /// Same term minus the linear function `⟨v, x⟩`. Least-squares terms are
    /// converted to their quadratic expansion.
    pub fn minus_linear(&self, v: &DVector<f64>) -> Self {
        match self {
            SmoothTerm::Quadratic { a, b, c } => SmoothTerm::Quadratic {
                a: a.clone(),
                b: b - v,
                c: *c,
            },
            SmoothTerm::LeastSquares { a, b, c } => SmoothTerm::Quadratic {
                a: a.tr_mul(a),
                b: -a.tr_mul(b) - v,
                c: c + 0.5 * b.norm_squared(),
            },
        }
    }
}

fn check_finite<'a>(field: &str, mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::field(field, "contains a non-finite entry"))
    }
}

/// `min f(x) + λ Σ r(|x_i|)`.
#[derive(Debug, Clone)]
pub struct Problem<R = Regularizer> {
    smooth: SmoothTerm,
    reg: R,
    lambda: f64,
    hessian: DMatrix<f64>,
    lipschitz: OnceLock<f64>,
}

impl<R: Penalty> Problem<R> {
    pub fn new(smooth: SmoothTerm, reg: R, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::field(
                "lambda",
                format!("must be positive and finite, got {lambda}"),
            ));
        }
        let hessian = smooth.hessian();
        Ok(Self {
            smooth,
            reg,
            lambda,
            hessian,
            lipschitz: OnceLock::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.smooth.dimension()
    }

    pub fn smooth(&self) -> &SmoothTerm {
        &self.smooth
    }

    pub fn regularizer(&self) -> &R {
        &self.reg
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check_dim(&self, context: &'static str, len: usize) -> Result<()> {
        if len != self.dimension() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dimension(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_eps(&self, x: &DVector<f64>, eps: &DVector<f64>) -> Result<()> {
        self.check_dim("perturbed value (x)", x.len())?;
        self.check_dim("perturbed value (eps)", eps.len())?;
        if let Some(i) = eps.iter().position(|&e| !(e >= 0.0)) {
            return Err(Error::InvalidArgument(format!("eps[{i}] = {} is negative", eps[i])));
        }
        Ok(())
    }

    /// `F(x) = f(x) + λ Σ r(|x_i|)`.
    pub fn objective_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim("objective_value", x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x has a non-finite entry".into()));
        }
        Ok(self.smooth.value(x) + self.lambda * x.iter().map(|v| self.reg.eval(v.abs())).sum::<f64>())
    }

    /// `f(x) + λ Σ r(|x_i| + ε_i)`.
    pub fn perturbed_value_l1(&self, x: &DVector<f64>, eps: &DVector<f64>) -> Result<f64> {
        self.check_eps(x, eps)?;
        Ok(self.perturbed_l1_unchecked(x, eps))
    }

    /// `f(x) + λ Σ r(√(x_i² + ε_i²))`.
    pub fn perturbed_value_l2(&self, x: &DVector<f64>, eps: &DVector<f64>) -> Result<f64> {
        self.check_eps(x, eps)?;
        Ok(self.perturbed_l2_unchecked(x, eps))
    }

    pub(crate) fn perturbed_l1_unchecked(&self, x: &DVector<f64>, eps: &DVector<f64>) -> f64 {
        let penalty: f64 = x.iter().zip(eps.iter()).map(|(v, e)| self.reg.eval(v.abs() + e)).sum();
        self.smooth.value(x) + self.lambda * penalty
    }

    pub(crate) fn perturbed_l2_unchecked(&self, x: &DVector<f64>, eps: &DVector<f64>) -> f64 {
        // hypot(v, 0) = |v| keeps the ε = 0 case bit-identical to the unperturbed value
        let penalty: f64 = x.iter().zip(eps.iter()).map(|(v, e)| self.reg.eval(v.hypot(*e))).sum();
        self.smooth.value(x) + self.lambda * penalty
    }

    pub fn smooth_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim("smooth_value", x.len())?;
        Ok(self.smooth.value(x))
    }

    pub fn gradient_smooth(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim("gradient_smooth", x.len())?;
        Ok(self.smooth.gradient(x))
    }

    /// Constant Hessian of `f`; `x` is only dimension-checked.
    pub fn hessian_smooth(&self, x: &DVector<f64>) -> Result<&DMatrix<f64>> {
        self.check_dim("hessian_smooth", x.len())?;
        Ok(&self.hessian)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Global Lipschitz constant of `∇f`: the largest eigenvalue magnitude of
    /// the constant Hessian, by power iteration on `H²`.
    pub fn estimate_lipschitz_gradient(&self) -> f64 {
        *self
            .lipschitz
            .get_or_init(|| spectral_radius(&self.hessian, 1e-8, 10_000))
    }

    /// The tilted problem `F(x) − ⟨v, x⟩`.
    pub fn with_linear_perturbation(&self, v: &DVector<f64>) -> Result<Self>
    where
        R: Clone,
    {
        self.check_dim("with_linear_perturbation", v.len())?;
        Problem::new(self.smooth.minus_linear(v), self.reg.clone(), self.lambda)
    }
}

/// Largest `|eigenvalue|` of a symmetric matrix via power iteration on `M²`.
pub(crate) fn spectral_radius(m: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    if n == 0 || m.amax() == 0.0 {
        return 0.0;
    }
    let sq = m.tr_mul(m);
    // fixed, slightly skewed start to avoid symmetric orthogonality
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0) / n as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = &sq * &v;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= rel_tol * rayleigh.abs() {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    estimate.max(0.0).sqrt()
}

impl Problem<Regularizer> {
    /// `f(x) = x₁² + (x₂ − 5/4)²`, LPN with `p = 1/2`, `λ = 1`.
    pub fn benchmark2d() -> Self {
        let a = DMatrix::from_diagonal_element(2, 2, 2.0);
        let b = DVector::from_vec(vec![0.0, -2.5]);
        let smooth = SmoothTerm::quadratic(a, b, 25.0 / 16.0).expect("valid benchmark term");
        Problem::new(smooth, Regularizer::lpn(0.5).expect("valid p"), 1.0).expect("valid lambda")
    }

    /// Resolves a built-in name (`benchmark2d`) or loads a problem file.
    pub fn from_name_or_path(name: &str) -> Result<Self> {
        match name {
            "benchmark2d" => Ok(Self::benchmark2d()),
            path => load_problem(path),
        }
    }

    pub fn to_file_format(&self) -> ProblemFile {
        let (kind, a, b, c) = match &self.smooth {
            SmoothTerm::Quadratic { a, b, c } => (SmoothKind::Quadratic, a, b, *c),
            SmoothTerm::LeastSquares { a, b, c } => (SmoothKind::LeastSquares, a, b, *c),
        };
        ProblemFile {
            smooth: SmoothFile {
                kind,
                a: a.row_iter().map(|row| row.iter().copied().collect()).collect(),
                b: b.iter().copied().collect(),
                c,
            },
            regularizer: self.reg,
            lambda: self.lambda,
        }
    }
}

/// Analytic stationary points of [`Problem::benchmark2d`].
///
/// On the `x₂` axis, stationarity reads `4s³ − 5s + 1 = 0` with `s = √x₂`,
/// which factors as `(s − 1)(4s² + 4s − 1)`; the origin is stationary
/// because the LPN slope at zero is unbounded.
pub mod benchmark2d {
    /// Strict local minimum `(0, 1)`.
    pub const MINIMUM: [f64; 2] = [0.0, 1.0];

    /// `x₂ = (3 − 2√2)/4` of the strict saddle `(0, x₂)`.
    pub fn saddle_x2() -> f64 {
        (3.0 - 2.0 * std::f64::consts::SQRT_2) / 4.0
    }

    pub fn saddle() -> [f64; 2] {
        [0.0, saddle_x2()]
    }

    /// All stationary points: origin, saddle, minimum.
    pub fn stationary_points() -> [[f64; 2]; 3] {
        [[0.0, 0.0], saddle(), MINIMUM]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothKind {
    Quadratic,
    LeastSquares,
}

/// On-disk problem description (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub smooth: SmoothFile,
    pub regularizer: Regularizer,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothFile {
    pub kind: SmoothKind,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<Problem> {
        let rows = self.smooth.a.len();
        let cols = self.smooth.a.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::field("A", "matrix is empty"));
        }
        if let Some(i) = self.smooth.a.iter().position(|r| r.len() != cols) {
            return Err(Error::field(
                "A",
                format!("row {i} has length {}, expected {cols}", self.smooth.a[i].len()),
            ));
        }
        let a = DMatrix::from_row_iterator(rows, cols, self.smooth.a.into_iter().flatten());
        let b = DVector::from_vec(self.smooth.b);
        let smooth = match self.smooth.kind {
            SmoothKind::Quadratic => SmoothTerm::quadratic(a, b, self.smooth.c)?,
            SmoothKind::LeastSquares => SmoothTerm::least_squares(a, b, self.smooth.c)?,
        };
        Problem::new(smooth, self.regularizer, self.lambda)
    }
}

/// Reads and validates a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_problem(&text)
}

pub fn parse_problem(text: &str) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text)?;
    file.into_problem()
}
