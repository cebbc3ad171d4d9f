//! Property suites run at fixed seeds, shared by the test suite and the
//! `selfcheck` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::symmetric_eigen;
use crate::jacobians::{
    dirl1_kink_distance, finite_difference_jacobian, fixed_point_jacobian, map_jacobian, saddle_unstable_equivalence,
    stacked_map,
};
use crate::problems::{benchmark2d, Problem};
use crate::regularizers::{check_assumption1, check_assumption4, Family, Penalty, Regularizer};
use crate::solvers::{
    fixed_point_residual, run, soft_threshold, subproblem_map, Algorithm, MapParams, SolveTrace, SolverConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, failure: Option<String>, ok_detail: impl Into<String>) -> Self {
        let passed = failure.is_none();
        Self {
            name: name.into(),
            passed,
            detail: failure.unwrap_or_else(|| ok_detail.into()),
        }
    }
}

/// Parameters exercised for each built-in family.
pub fn family_samples() -> Vec<Regularizer> {
    let mut regs = Vec::new();
    for family in Family::ALL {
        let params: &[f64] = if family == Family::Lpn {
            &[0.1, 0.5, 0.9]
        } else {
            &[0.5, 1.0, 2.0]
        };
        regs.extend(
            params
                .iter()
                .map(|&p| Regularizer::new(family, p).expect("valid sample parameter")),
        );
    }
    regs
}

/// 41 log-spaced points on `[0.1, 10]`.
pub fn derivative_grid() -> Vec<f64> {
    (0..=40).map(|k| 10f64.powf(-1.0 + k as f64 / 20.0)).collect()
}

/// Derivative of `f` at `t` by Richardson-extrapolated central differences
/// (Ridders), with the extrapolation error estimate. All stages run; the
/// usual early exit misfires where a higher derivative vanishes.
pub fn extrapolated_derivative(f: impl Fn(f64) -> f64, t: f64, h0: f64) -> (f64, f64) {
    const SHRINK: f64 = 1.4;
    const STAGES: usize = 10;
    let mut table = [[0.0f64; STAGES]; STAGES];
    let mut h = h0;
    table[0][0] = (f(t + h) - f(t - h)) / (2.0 * h);
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for i in 1..STAGES {
        h /= SHRINK;
        table[0][i] = (f(t + h) - f(t - h)) / (2.0 * h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
    }
    (best, err)
}

/// Differences of `r` and `r'` against `r'` and `r''` on `grid`.
pub fn derivative_consistency(name: &str, reg: &dyn Penalty, grid: &[f64], rel_tol: f64) -> CheckOutcome {
    let close = |fd: f64, an: f64| (fd - an).abs() <= rel_tol * an.abs().max(fd.abs());
    let failure = grid.iter().find_map(|&t| {
        let (d1, _) = extrapolated_derivative(|s| reg.eval(s), t, 0.1 * t);
        let (d2, _) = extrapolated_derivative(|s| reg.eval_derivative(s), t, 0.1 * t);
        let (a1, a2) = (reg.eval_derivative(t), reg.eval_second_derivative(t));
        if !close(d1, a1) {
            Some(format!("r'({t}) = {a1:e} but differences give {d1:e}"))
        } else if !close(d2, a2) {
            Some(format!("r''({t}) = {a2:e} but differences give {d2:e}"))
        } else {
            None
        }
    });
    CheckOutcome::new(format!("derivatives/{name}"), failure, format!("{} points", grid.len()))
}

pub fn derivative_suite() -> Vec<CheckOutcome> {
    let grid = derivative_grid();
    family_samples()
        .iter()
        .map(|r| derivative_consistency(&format!("{}(p={})", r.family(), r.p()), r, &grid, 1e-6))
        .collect()
}

pub fn concavity_suite() -> Vec<CheckOutcome> {
    let grid: Vec<f64> = (1..=200).map(|k| k as f64 * 0.05).collect();
    family_samples()
        .iter()
        .map(|r| {
            let failure = match check_assumption1(r, &grid) {
                Ok(rep) if rep.holds() => None,
                Ok(rep) => Some(format!("{rep:?}")),
                Err(e) => Some(e.to_string()),
            };
            CheckOutcome::new(
                format!("assumption1/{}(p={})", r.family(), r.p()),
                failure,
                "concave, increasing, r(0)=0",
            )
        })
        .collect()
}

/// Unbounded-slope check must hold for LPN and fail for every other family.
pub fn assumption4_suite() -> CheckOutcome {
    let seq: Vec<f64> = (1..=12).map(|k| 10f64.powi(-k)).collect();
    let failure = family_samples().iter().find_map(|r| {
        let holds = check_assumption4(r, &seq).map(|rep| rep.holds).unwrap_or(false);
        (holds != (r.family() == Family::Lpn)).then(|| format!("{}(p={}) gave holds={holds}", r.family(), r.p()))
    });
    CheckOutcome::new("assumption4/exactly-lpn", failure, "holds only for LPN")
}

/// `‖S_ŵ(ẑ) − S_w̃(z̃)‖ ≤ ‖ẑ − z̃‖ + ‖ŵ − w̃‖` on random tuples.
pub fn nonexpansive_suite(samples: usize, dim: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut failure = None;
    for trial in 0..samples {
        let scale = [0.01, 1.0, 100.0][trial % 3];
        let z1 = DVector::from_fn(dim, |_, _| rng.gen_range(-scale..scale));
        let z2 = DVector::from_fn(dim, |_, _| rng.gen_range(-scale..scale));
        let w1 = DVector::from_fn(dim, |_, _| rng.gen_range(0.0..scale));
        let w2 = DVector::from_fn(dim, |_, _| rng.gen_range(0.0..scale));
        let lhs = (soft_threshold(&z1, &w1).expect("valid") - soft_threshold(&z2, &w2).expect("valid")).norm();
        let rhs = (&z1 - &z2).norm() + (&w1 - &w2).norm();
        worst = worst.max(lhs - rhs);
        if lhs > rhs + 1e-12 && failure.is_none() {
            failure = Some(format!(
                "tuple {trial}: lhs {lhs:e} > rhs {rhs:e}; z1={z1:?} z2={z2:?} w1={w1:?} w2={w2:?}"
            ));
        }
    }
    CheckOutcome::new(
        "nonexpansive/soft-threshold",
        failure,
        format!("{samples} tuples in dimension {dim}, max lhs-rhs = {worst:e}"),
    )
}

/// First violation of monotone descent or of the telescoped bound
/// `F⁰ − F^k ≥ (β/α − L/2) Σ‖Δx‖²` (slack `1e−8·k`).
pub fn descent_violation(trace: &SolveTrace, config: &SolverConfig, lipschitz: f64) -> Option<String> {
    for w in trace.states.windows(2) {
        if w[1].f_perturbed > w[0].f_perturbed + 1e-10 * w[0].f_perturbed.abs() {
            return Some(format!(
                "F increased at k={}: {:e} -> {:e}",
                w[1].k, w[0].f_perturbed, w[1].f_perturbed
            ));
        }
    }
    let f0 = trace.initial_value();
    let coef = config.beta / config.alpha - lipschitz / 2.0;
    trace.states.iter().find_map(|s| {
        let lhs = f0 - s.f_perturbed;
        let rhs = coef * s.cumulative_step_sq;
        (lhs < rhs - 1e-8 * s.k as f64).then(|| format!("telescoped bound fails at k={}: {lhs:e} < {rhs:e}", s.k))
    })
}

fn benchmark_inits(seed: u64, count: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)))
        .collect()
}

/// Descent and fixed-point checks on seeded benchmark runs.
pub fn solver_suite(runs: usize, seed: u64) -> Vec<CheckOutcome> {
    let p = Problem::benchmark2d();
    let lipschitz = p.estimate_lipschitz_gradient();
    let mut out = Vec::new();
    for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
        let config = SolverConfig::default().with_algorithm(alg);
        let mut descent = None;
        let mut fixed = None;
        let mut worst_residual: f64 = 0.0;
        for (i, x0) in benchmark_inits(seed, runs).iter().enumerate() {
            match run(&config, &p, x0) {
                Ok(trace) => {
                    if descent.is_none() {
                        descent =
                            descent_violation(&trace, &config, lipschitz).map(|m| format!("init {i} {x0:?}: {m}"));
                    }
                    if trace.converged {
                        let r = fixed_point_residual(alg, &p, config.beta, &trace.last_iterate);
                        worst_residual = worst_residual.max(r);
                        if r > 10.0 * config.tol_step && fixed.is_none() {
                            fixed = Some(format!("init {i} {x0:?}: residual {r:e}"));
                        }
                    } else if fixed.is_none() {
                        fixed = Some(format!("init {i} {x0:?}: did not converge"));
                    }
                }
                Err(e) => {
                    descent.get_or_insert_with(|| format!("init {i}: {e}"));
                }
            }
        }
        out.push(CheckOutcome::new(
            format!("descent/{alg}"),
            descent,
            format!("{runs} benchmark runs"),
        ));
        out.push(CheckOutcome::new(
            format!("fixed-point/{alg}"),
            fixed,
            format!("max residual {worst_residual:e}"),
        ));
    }
    out
}

/// Analytic against central-difference Jacobians at random smooth points.
pub fn jacobian_fd_suite(points: usize, seed: u64) -> Vec<CheckOutcome> {
    let p = Problem::benchmark2d();
    let params = MapParams::new(0.2, 4.0, 0.3);
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
        let mut worst: f64 = 0.0;
        let mut failure = None;
        let mut checked = 0;
        while checked < points {
            let x = DVector::from_fn(2, |_, _| {
                let m = rng.gen_range(0.1..3.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            });
            let eps = DVector::from_fn(2, |_, _| rng.gen_range(0.1..1.0));
            if alg == Algorithm::Dirl1 && dirl1_kink_distance(&p, params.beta, &x, &eps) < 10.0 * h {
                continue;
            }
            checked += 1;
            let point = DVector::from_iterator(4, x.iter().chain(eps.iter()).copied());
            let result = map_jacobian(alg, &p, &params, &x, &eps)
                .and_then(|a| Ok((a, finite_difference_jacobian(stacked_map(alg, &p, params), &point, h)?)));
            match result {
                Ok((analytic, fd)) => {
                    let dev = (&analytic - &fd).amax();
                    worst = worst.max(dev);
                    if dev > 1e-5 && failure.is_none() {
                        failure = Some(format!("at x={x:?} eps={eps:?}: deviation {dev:e}"));
                    }
                }
                Err(e) => {
                    failure.get_or_insert_with(|| format!("at x={x:?} eps={eps:?}: {e}"));
                }
            }
        }
        out.push(CheckOutcome::new(
            format!("jacobian-fd/{alg}"),
            failure,
            format!("{points} points, max deviation {worst:e}"),
        ));
    }
    out
}

/// Support block of `DT` against central differences of `T` in the support
/// coordinates at the benchmark stationary points.
pub fn stationary_block_fd_suite() -> Vec<CheckOutcome> {
    let p = Problem::benchmark2d();
    let params = MapParams::new(0.2, 4.0, 0.3);
    let mut out = Vec::new();
    for alg in [Algorithm::Dirl1, Algorithm::Dirl2] {
        let mut worst: f64 = 0.0;
        let failure = [benchmark2d::MINIMUM, benchmark2d::saddle()].iter().find_map(|point| {
            let x = DVector::from_column_slice(point);
            let jac = match fixed_point_jacobian(alg, &p, &x, &params) {
                Ok(j) => j,
                Err(e) => return Some(e.to_string()),
            };
            let full = stacked_map(alg, &p, params);
            let act = &jac.active;
            let restricted = |xi: &DVector<f64>| {
                let mut z = DVector::zeros(2 * x.len());
                z.rows_mut(0, x.len()).copy_from(&x);
                for (a, &i) in act.iter().enumerate() {
                    z[i] = xi[a];
                }
                let image = full(&z);
                DVector::from_iterator(act.len(), act.iter().map(|&i| image[i]))
            };
            let xi = DVector::from_iterator(act.len(), act.iter().map(|&i| x[i]));
            match finite_difference_jacobian(restricted, &xi, 1e-6) {
                Ok(fd) => {
                    let analytic = DMatrix::from_fn(act.len(), act.len(), |a, b| jac.diag_block[a][b]);
                    let dev = (&fd - &analytic).amax();
                    worst = worst.max(dev);
                    (dev > 1e-5).then(|| format!("at {point:?}: deviation {dev:e}"))
                }
                Err(e) => Some(e.to_string()),
            }
        });
        out.push(CheckOutcome::new(
            format!("jacobian-fd-stationary/{alg}"),
            failure,
            format!("max deviation {worst:e}"),
        ));
    }
    out
}

/// `|∂S^x_1/∂x_1|` and `|∂S^x_1/∂ε_1|` for DIRL₂ on the benchmark at
/// `(x_1, ε_1) = (t, t)`, by central differences with step `t/1000`.
pub fn dirl2_boundary_partials(t: f64) -> crate::Result<(f64, f64)> {
    let p = Problem::benchmark2d();
    let beta = 4.0;
    let s_map = |z: &DVector<f64>| {
        let x = z.rows(0, 2).into_owned();
        let eps = z.rows(2, 2).into_owned();
        subproblem_map(Algorithm::Dirl2, &p, beta, &x, &eps)
    };
    let point = DVector::from_column_slice(&[t, 1.0, t, 0.5]);
    let jac = finite_difference_jacobian(s_map, &point, t * 1e-3)?;
    Ok((jac[(0, 0)].abs(), jac[(0, 2)].abs()))
}

/// The partials must shrink strictly as `t` runs through `1e−2, 1e−3, 1e−4`.
pub fn boundary_smoothness_suite() -> CheckOutcome {
    let ts = [1e-2, 1e-3, 1e-4];
    let mut values = Vec::new();
    let mut failure = None;
    for t in ts {
        match dirl2_boundary_partials(t) {
            Ok(v) => values.push(v),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    if failure.is_none() {
        failure = values
            .windows(2)
            .position(|w| !(w[1].0 < w[0].0 && w[1].1 < w[0].1))
            .map(|i| {
                format!(
                    "partials did not shrink from t={} to t={}: {values:?}",
                    ts[i],
                    ts[i + 1]
                )
            });
    }
    let detail = values
        .iter()
        .zip(ts)
        .map(|((dx, de), t)| format!("t={t:e}: {dx:.3e}/{de:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    CheckOutcome::new("dirl2-boundary-smoothness", failure, detail)
}

/// Saddle ⇔ unstable and minimum ⇔ stable at the benchmark points.
pub fn stability_suite() -> Vec<CheckOutcome> {
    let p = Problem::benchmark2d();
    let params = MapParams::new(0.2, 4.0, 0.3);
    [Algorithm::Dirl1, Algorithm::Dirl2]
        .into_iter()
        .map(|alg| {
            let failure = [benchmark2d::saddle(), benchmark2d::MINIMUM].iter().find_map(|x| {
                let x = DVector::from_column_slice(x);
                match saddle_unstable_equivalence(&p, &x, &params, alg, None) {
                    Ok(r) if r.consistent && r.invertible => None,
                    Ok(r) => Some(r.mismatch.unwrap_or_else(|| format!("DT singular at {x:?}"))),
                    Err(e) => Some(e.to_string()),
                }
            });
            CheckOutcome::new(
                format!("saddle-instability/{alg}"),
                failure,
                "benchmark saddle unstable, minimum stable",
            )
        })
        .collect()
}

pub fn eigen_suite(matrices: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure = None;
    for trial in 0..matrices {
        let n = 1 + trial % 12;
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let m = &b + b.transpose();
        let res = symmetric_eigen(&m).map(|e| {
            let recon = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues) * e.eigenvectors.transpose();
            let ortho = e.eigenvectors.transpose() * &e.eigenvectors - DMatrix::identity(n, n);
            ((recon - &m).norm() / m.norm().max(1e-300), ortho.amax())
        });
        match res {
            Ok((r, o)) if r <= 1e-10 && o <= 1e-10 => {}
            Ok((r, o)) => {
                failure = Some(format!(
                    "matrix {trial} (n={n}): reconstruction {r:e}, orthogonality {o:e}"
                ));
                break;
            }
            Err(e) => {
                failure = Some(format!("matrix {trial}: {e}"));
                break;
            }
        }
    }
    CheckOutcome::new(
        "eigen/reconstruction",
        failure,
        format!("{matrices} random symmetric matrices"),
    )
}

/// Every suite at its default size and seed.
pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = derivative_suite();
    out.extend(concavity_suite());
    out.push(assumption4_suite());
    out.push(nonexpansive_suite(100_000, 10, 1));
    out.extend(solver_suite(20, 2));
    out.extend(jacobian_fd_suite(20, 3));
    out.extend(stationary_block_fd_suite());
    out.push(boundary_smoothness_suite());
    out.extend(stability_suite());
    out.push(eigen_suite(200, 4));
    out
}
