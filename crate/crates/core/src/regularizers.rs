//! Concave sparsity-inducing penalties `r(|t|)`.
//!
//! Five closed-form families are built in (EXP, LOG, FRA, LPN, TAN). Every
//! family is continuous, nondecreasing and concave on `[0, ∞)` with `r(0) = 0`.
//! LPN is the only one whose slope at the origin is unbounded; this is encoded
//! as `f64::INFINITY`, and IEEE arithmetic gives the conventions the solvers
//! rely on (`c / ∞ = 0`, `max(|z| - ∞, 0) = 0`).
//!
//! User-defined penalties plug in through [`CustomPenalty`]; the numeric
//! checks in this module accept any [`Penalty`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concave penalty on the magnitude of a coordinate.
///
/// Implementors provide the raw closed forms. The checked entry points
/// (`value`, `derivative`, `second_derivative`) validate their argument.
pub trait Penalty: fmt::Debug + Send + Sync {
    /// `r(t)` for `t >= 0`.
    fn eval(&self, t: f64) -> f64;
    /// `r'(t)` for `t > 0`.
    fn eval_derivative(&self, t: f64) -> f64;
    /// `r''(t)` for `t > 0`.
    fn eval_second_derivative(&self, t: f64) -> f64;
    /// `lim r'(t)` as `t -> 0+`; may be `+∞`.
    fn derivative_at_zero_plus(&self) -> f64;
    /// `lim r''(t)` as `t -> 0+`; may be `-∞`.
    fn second_derivative_at_zero_plus(&self) -> f64;

    /// Upper bound on `|r''(t)|` over `t >= lower`. `lower = 0` means the
    /// whole open half-line.
    fn curvature_bound(&self, lower: f64) -> f64 {
        if lower > 0.0 {
            self.eval_second_derivative(lower).abs()
        } else {
            self.second_derivative_at_zero_plus().abs()
        }
    }

    fn value(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain {
                func: "value",
                detail: format!("t must be finite and nonnegative, got {t}"),
            });
        }
        Ok(self.eval(t))
    }

    fn derivative(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Domain {
                func: "derivative",
                detail: format!("t must be finite and positive, got {t} (use derivative_at_zero_plus)"),
            });
        }
        Ok(self.eval_derivative(t))
    }

    fn second_derivative(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Domain {
                func: "second_derivative",
                detail: format!("t must be finite and positive, got {t}"),
            });
        }
        Ok(self.eval_second_derivative(t))
    }

    /// Reweighting value `r'(t)` extended to `t = 0` by the right limit.
    fn weight(&self, t: f64) -> f64 {
        if t > 0.0 {
            self.eval_derivative(t)
        } else {
            self.derivative_at_zero_plus()
        }
    }

    fn class(&self) -> RegularizerClass {
        let d0 = self.derivative_at_zero_plus();
        RegularizerClass {
            lipschitz_at_zero: d0.is_finite(),
            derivative_at_zero: d0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "EXP")]
    Exp,
    #[serde(rename = "LOG")]
    Log,
    #[serde(rename = "FRA")]
    Fra,
    #[serde(rename = "LPN")]
    Lpn,
    #[serde(rename = "TAN")]
    Tan,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Exp, Family::Log, Family::Fra, Family::Lpn, Family::Tan];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exp => "EXP",
            Family::Log => "LOG",
            Family::Fra => "FRA",
            Family::Lpn => "LPN",
            Family::Tan => "TAN",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EXP" => Ok(Family::Exp),
            "LOG" => Ok(Family::Log),
            "FRA" => Ok(Family::Fra),
            "LPN" => Ok(Family::Lpn),
            "TAN" => Ok(Family::Tan),
            _ => Err(Error::field("family", format!("unknown regularizer family {s:?}"))),
        }
    }
}

/// One of the built-in penalty families with its parameter `p`.
///
/// Serialized as `{"family": "LPN", "p": 0.5}`; invalid parameters are
/// rejected at deserialization time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegularizer")]
pub struct Regularizer {
    family: Family,
    p: f64,
}

#[derive(Deserialize)]
struct RawRegularizer {
    family: Family,
    p: f64,
}

impl TryFrom<RawRegularizer> for Regularizer {
    type Error = Error;

    fn try_from(raw: RawRegularizer) -> Result<Self> {
        Regularizer::new(raw.family, raw.p)
    }
}

impl Regularizer {
    pub fn new(family: Family, p: f64) -> Result<Self> {
        if !p.is_finite() || p <= 0.0 {
            return Err(Error::field(
                "p",
                format!("{family} parameter must be positive and finite, got {p}"),
            ));
        }
        if family == Family::Lpn && p >= 1.0 {
            return Err(Error::field("p", format!("LPN exponent must lie in (0, 1), got {p}")));
        }
        Ok(Self { family, p })
    }

    pub fn exp(p: f64) -> Result<Self> {
        Self::new(Family::Exp, p)
    }

    pub fn log(p: f64) -> Result<Self> {
        Self::new(Family::Log, p)
    }

    pub fn fra(p: f64) -> Result<Self> {
        Self::new(Family::Fra, p)
    }

    pub fn lpn(p: f64) -> Result<Self> {
        Self::new(Family::Lpn, p)
    }

    pub fn tan(p: f64) -> Result<Self> {
        Self::new(Family::Tan, p)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl Penalty for Regularizer {
    fn eval(&self, t: f64) -> f64 {
        let p = self.p;
        match self.family {
            Family::Exp => -(-p * t).exp_m1(),
            Family::Log => (p * t).ln_1p(),
            Family::Fra => t / (t + p),
            Family::Lpn => t.powf(p),
            Family::Tan => (t / p).atan(),
        }
    }

    fn eval_derivative(&self, t: f64) -> f64 {
        let p = self.p;
        match self.family {
            Family::Exp => p * (-p * t).exp(),
            Family::Log => p / (1.0 + p * t),
            Family::Fra => p / ((t + p) * (t + p)),
            Family::Lpn => p * t.powf(p - 1.0),
            Family::Tan => p / (t * t + p * p),
        }
    }

    fn eval_second_derivative(&self, t: f64) -> f64 {
        let p = self.p;
        match self.family {
            Family::Exp => -p * p * (-p * t).exp(),
            Family::Log => {
                let d = 1.0 + p * t;
                -p * p / (d * d)
            }
            Family::Fra => -2.0 * p / (t + p).powi(3),
            Family::Lpn => p * (p - 1.0) * t.powf(p - 2.0),
            Family::Tan => {
                let d = t * t + p * p;
                -2.0 * p * t / (d * d)
            }
        }
    }

    fn derivative_at_zero_plus(&self) -> f64 {
        match self.family {
            Family::Exp | Family::Log => self.p,
            Family::Fra | Family::Tan => 1.0 / self.p,
            Family::Lpn => f64::INFINITY,
        }
    }

    fn second_derivative_at_zero_plus(&self) -> f64 {
        let p = self.p;
        match self.family {
            Family::Exp | Family::Log => -p * p,
            Family::Fra => -2.0 / (p * p),
            Family::Lpn => f64::NEG_INFINITY,
            Family::Tan => 0.0,
        }
    }

    fn curvature_bound(&self, lower: f64) -> f64 {
        match self.family {
            // |r''| peaks at t = p / sqrt(3) for TAN rather than at the origin.
            Family::Tan => {
                let peak = self.p / 3f64.sqrt();
                self.eval_second_derivative(lower.max(peak)).abs()
            }
            _ if lower > 0.0 => self.eval_second_derivative(lower).abs(),
            _ => self.second_derivative_at_zero_plus().abs(),
        }
    }
}

/// Classification of a penalty by its slope at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularizerClass {
    /// `true` iff `r'(0+) < ∞`.
    pub lipschitz_at_zero: bool,
    #[serde(with = "crate::ext_real")]
    pub derivative_at_zero: f64,
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A penalty supplied as closures. It must obey the same contract as the
/// built-in families; [`check_assumption1`] can be used to vet it.
pub struct CustomPenalty {
    name: String,
    value: ScalarFn,
    derivative: ScalarFn,
    second_derivative: ScalarFn,
    derivative_at_zero: f64,
    second_derivative_at_zero: f64,
}

impl CustomPenalty {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second_derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative_at_zero: f64,
        second_derivative_at_zero: f64,
    ) -> Self {
        Self {
            name: name.into(),
            value: Box::new(value),
            derivative: Box::new(derivative),
            second_derivative: Box::new(second_derivative),
            derivative_at_zero,
            second_derivative_at_zero,
        }
    }
}

impl fmt::Debug for CustomPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPenalty")
            .field("name", &self.name)
            .field("derivative_at_zero", &self.derivative_at_zero)
            .finish_non_exhaustive()
    }
}

impl Penalty for CustomPenalty {
    fn eval(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    fn eval_derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    fn eval_second_derivative(&self, t: f64) -> f64 {
        (self.second_derivative)(t)
    }

    fn derivative_at_zero_plus(&self) -> f64 {
        self.derivative_at_zero
    }

    fn second_derivative_at_zero_plus(&self) -> f64 {
        self.second_derivative_at_zero
    }
}

impl<P: Penalty + ?Sized> Penalty for &P {
    fn eval(&self, t: f64) -> f64 {
        (**self).eval(t)
    }
    fn eval_derivative(&self, t: f64) -> f64 {
        (**self).eval_derivative(t)
    }
    fn eval_second_derivative(&self, t: f64) -> f64 {
        (**self).eval_second_derivative(t)
    }
    fn derivative_at_zero_plus(&self) -> f64 {
        (**self).derivative_at_zero_plus()
    }
    fn second_derivative_at_zero_plus(&self) -> f64 {
        (**self).second_derivative_at_zero_plus()
    }
    fn curvature_bound(&self, lower: f64) -> f64 {
        (**self).curvature_bound(lower)
    }
}

/// Outcome of the numeric check of continuity, monotonicity and concavity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub zero_at_origin: bool,
    pub nonnegative_slope: bool,
    pub nonincreasing_slope: bool,
    pub nonpositive_curvature: bool,
    pub positive_slope_at_zero: bool,
}

impl Assumption1Report {
    pub fn holds(&self) -> bool {
        self.zero_at_origin
            && self.nonnegative_slope
            && self.nonincreasing_slope
            && self.nonpositive_curvature
            && self.positive_slope_at_zero
    }
}

/// Checks `r(0) = 0`, `r' >= 0`, `r'` nonincreasing, `r'' <= 0` on `grid`
/// and `r'(0+) > 0`.
pub fn check_assumption1<P: Penalty + ?Sized>(reg: &P, grid: &[f64]) -> Result<Assumption1Report> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("assumption check needs a nonempty grid".into()));
    }
    if grid.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("grid points must be positive and finite".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }

    let slopes: Vec<f64> = grid.iter().map(|&t| reg.eval_derivative(t)).collect();
    Ok(Assumption1Report {
        zero_at_origin: reg.eval(0.0).abs() <= 1e-12,
        nonnegative_slope: slopes.iter().all(|&d| d >= 0.0),
        nonincreasing_slope: slopes.windows(2).all(|w| w[0] >= w[1]),
        nonpositive_curvature: grid.iter().all(|&t| reg.eval_second_derivative(t) <= 0.0),
        positive_slope_at_zero: reg.derivative_at_zero_plus() > 0.0,
    })
}

/// Trend of `r'(z)` and `z r''(z) / r'(z)^2` along a sequence `z -> 0+`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption4Report {
    pub holds: bool,
    /// `r'(0+) = ∞`.
    pub unbounded_slope_at_zero: bool,
    /// `r'` strictly increases along the sequence.
    pub slope_grows: bool,
    /// `|z r''/r'^2|` strictly decreases along the sequence.
    pub ratio_vanishes: bool,
    pub slopes: Vec<f64>,
    pub ratios: Vec<f64>,
}

pub fn check_assumption4<P: Penalty + ?Sized>(reg: &P, sequence: &[f64]) -> Result<Assumption4Report> {
    if sequence.len() < 2 {
        return Err(Error::InvalidArgument(
            "slope-ratio check needs at least two points".into(),
        ));
    }
    if sequence.iter().any(|&z| !(z > 0.0) || !z.is_finite()) {
        return Err(Error::InvalidArgument(
            "sequence entries must be positive and finite".into(),
        ));
    }
    if sequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("sequence must be strictly decreasing".into()));
    }

    let slopes: Vec<f64> = sequence.iter().map(|&z| reg.eval_derivative(z)).collect();
    let ratios: Vec<f64> = sequence
        .iter()
        .zip(&slopes)
        .map(|(&z, &d)| z * reg.eval_second_derivative(z) / (d * d))
        .collect();

    let unbounded_slope_at_zero = reg.derivative_at_zero_plus() == f64::INFINITY;
    let slope_grows = slopes.windows(2).all(|w| w[1] > w[0]);
    let ratio_vanishes = ratios.windows(2).all(|w| w[1].abs() < w[0].abs());
    Ok(Assumption4Report {
        holds: unbounded_slope_at_zero && slope_grows && ratio_vanishes,
        unbounded_slope_at_zero,
        slope_grows,
        ratio_vanishes,
        slopes,
        ratios,
    })
}

/// Smallest `t >= 0` with `r'(t) <= level`, found by bisection on the
/// nonincreasing slope. Returns `0` when `r'(0+) <= level`.
pub fn inverse_derivative<P: Penalty + ?Sized>(reg: &P, level: f64) -> f64 {
    if reg.derivative_at_zero_plus() <= level {
        return 0.0;
    }
    let mut hi = 1.0;
    while reg.eval_derivative(hi) > level {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reg.eval_derivative(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Vec<f64> {
        (1..=1000).map(|i| 0.01 * i as f64).collect()
    }

    #[test]
    fn table_values() {
        assert_relative_eq!(Regularizer::lpn(0.5).unwrap().value(4.0).unwrap(), 2.0);
        assert_eq!(Regularizer::exp(1.0).unwrap().value(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            Regularizer::log(2.0).unwrap().value(0.5).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        for fam in Family::ALL {
            let p = if fam == Family::Lpn { 0.5 } else { 1.7 };
            assert_eq!(Regularizer::new(fam, p).unwrap().value(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn table_derivatives() {
        let lpn = Regularizer::lpn(0.5).unwrap();
        assert_relative_eq!(lpn.derivative(4.0).unwrap(), 0.25);
        assert_relative_eq!(lpn.second_derivative(4.0).unwrap(), -0.03125);
        assert_relative_eq!(Regularizer::tan(2.0).unwrap().derivative(2.0).unwrap(), 0.25);
        assert_relative_eq!(Regularizer::log(1.0).unwrap().second_derivative(1.0).unwrap(), -0.25);

        let fra = Regularizer::fra(1.0).unwrap();
        assert_relative_eq!(fra.derivative_at_zero_plus(), 1.0);
        assert_relative_eq!(fra.derivative(1e-12).unwrap(), 1.0, epsilon = 1e-9);
        let exp = Regularizer::exp(1.0).unwrap();
        assert_relative_eq!(exp.second_derivative_at_zero_plus(), -1.0);
        assert_relative_eq!(exp.second_derivative(1e-12).unwrap(), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn slope_at_zero() {
        assert_eq!(Regularizer::exp(3.0).unwrap().derivative_at_zero_plus(), 3.0);
        assert_eq!(Regularizer::lpn(0.5).unwrap().derivative_at_zero_plus(), f64::INFINITY);
        assert_eq!(Regularizer::fra(2.0).unwrap().derivative_at_zero_plus(), 0.5);
        for fam in Family::ALL {
            let p = if fam == Family::Lpn { 0.3 } else { 0.8 };
            let class = Regularizer::new(fam, p).unwrap().class();
            assert_eq!(class.lipschitz_at_zero, fam != Family::Lpn);
            assert!(class.derivative_at_zero > 0.0);
        }
    }

    #[test]
    fn domain_errors() {
        let r = Regularizer::lpn(0.5).unwrap();
        assert!(matches!(r.value(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(r.value(f64::NAN), Err(Error::Domain { .. })));
        assert!(matches!(r.derivative(0.0), Err(Error::Domain { .. })));
        assert!(matches!(r.second_derivative(-2.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        let err = Regularizer::lpn(1.5).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert!(Regularizer::exp(0.0).is_err());
        assert!(Regularizer::tan(f64::INFINITY).is_err());
        assert!(Regularizer::log(-1.0).is_err());
    }

    #[test]
    fn serde_form() {
        let r: Regularizer = serde_json::from_str(r#"{"family": "LPN", "p": 0.5}"#).unwrap();
        assert_eq!(r, Regularizer::lpn(0.5).unwrap());
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"family":"LPN","p":0.5}"#);
        let err = serde_json::from_str::<Regularizer>(r#"{"family": "LPN", "p": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("`p`"));
    }

    #[test]
    fn assumption1_holds_for_builtins() {
        for fam in Family::ALL {
            let p = if fam == Family::Lpn { 0.5 } else { 1.0 };
            let report = check_assumption1(&Regularizer::new(fam, p).unwrap(), &grid()).unwrap();
            assert!(report.holds(), "{fam}: {report:?}");
        }
        assert!(check_assumption1(&Regularizer::exp(1.0).unwrap(), &[]).is_err());
        assert!(check_assumption1(&Regularizer::exp(1.0).unwrap(), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn assumption1_flags_convex_custom_penalty() {
        let square = CustomPenalty::new("square", |t| t * t, |t| 2.0 * t, |_| 2.0, 0.0, 2.0);
        let report = check_assumption1(&square, &grid()).unwrap();
        assert!(!report.nonincreasing_slope);
        assert!(!report.nonpositive_curvature);
        assert!(!report.positive_slope_at_zero);
        assert!(!report.holds());
    }

    #[test]
    fn assumption4_only_lpn() {
        let seq: Vec<f64> = (1..=12).map(|k| 10f64.powi(-k)).collect();
        for fam in Family::ALL {
            let p = if fam == Family::Lpn { 0.5 } else { 1.0 };
            let report = check_assumption4(&Regularizer::new(fam, p).unwrap(), &seq).unwrap();
            assert_eq!(report.holds, fam == Family::Lpn, "{fam}");
        }
        // ((p-1)/p) z^(1-p) closed form
        let lpn = Regularizer::lpn(0.5).unwrap();
        let report = check_assumption4(&lpn, &seq).unwrap();
        for (z, q) in seq.iter().zip(&report.ratios) {
            assert_relative_eq!(*q, -z.powf(0.5), max_relative = 1e-12);
        }
        let lpn9 = Regularizer::lpn(0.9).unwrap();
        let q = check_assumption4(&lpn9, &[1e-5, 1e-6]).unwrap().ratios[1];
        assert_relative_eq!(q.abs(), 10f64.powf(-0.6) / 9.0, max_relative = 1e-12);
        assert_relative_eq!(q.abs(), 0.0279, epsilon = 5e-5);

        assert!(check_assumption4(&lpn, &[1e-2, 1e-1]).is_err());
        assert!(check_assumption4(&lpn, &[1e-2]).is_err());
    }

    #[test]
    fn inverse_derivative_matches_closed_form() {
        let lpn = Regularizer::lpn(0.5).unwrap();
        // p t^(p-1) = c  =>  t = (c/p)^(1/(p-1))
        let c = 3.0;
        let expected = (c / 0.5f64).powf(1.0 / (0.5 - 1.0));
        assert_relative_eq!(inverse_derivative(&lpn, c), expected, max_relative = 1e-12);
        assert_eq!(inverse_derivative(&Regularizer::exp(1.0).unwrap(), 2.0), 0.0);
    }

    #[test]
    fn tan_curvature_bound_uses_interior_peak() {
        let tan = Regularizer::tan(1.0).unwrap();
        let peak = (
            1.0f64 / 3f64.sqrt(),
            tan.eval_second_derivative(1.0 / 3f64.sqrt()).abs(),
        );
        let sampled = (1..10_000)
            .map(|i| tan.eval_second_derivative(i as f64 * 1e-3).abs())
            .fold(0.0, f64::max);
        assert!(tan.curvature_bound(0.0) >= sampled);
        assert_relative_eq!(tan.curvature_bound(0.0), peak.1);
    }
}
