use dirl_core::analysis::symmetric_eigen;
use dirl_core::jacobians::{
    finite_difference_jacobian, finite_difference_jacobian_with, fixed_point_jacobian, stacked_map, FdStep,
};
use dirl_core::problems::{benchmark2d, Problem};
use dirl_core::solvers::{subproblem_map, Algorithm, MapParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const ALGS: [Algorithm; 2] = [Algorithm::Dirl1, Algorithm::Dirl2];

fn params() -> MapParams {
    MapParams::new(0.2, 4.0, 0.3)
}

fn stationary_points() -> Vec<DVector<f64>> {
    vec![
        DVector::from_column_slice(&benchmark2d::MINIMUM),
        DVector::from_column_slice(&benchmark2d::saddle()),
    ]
}

#[test]
fn support_block_matches_fd_at_stationary_points() {
    let p = Problem::benchmark2d();
    for alg in ALGS {
        for x in stationary_points() {
            let jac = fixed_point_jacobian(alg, &p, &x, &params()).unwrap();
            // T restricted to the support coordinates with everything else frozen
            let full = stacked_map(alg, &p, params());
            let act = jac.active.clone();
            let restricted = |xi: &DVector<f64>| {
                let mut point = DVector::zeros(4);
                point.rows_mut(0, 2).copy_from(&x);
                for (a, &i) in act.iter().enumerate() {
                    point[i] = xi[a];
                }
                let out = full(&point);
                DVector::from_iterator(act.len(), act.iter().map(|&i| out[i]))
            };
            let xi = DVector::from_iterator(act.len(), act.iter().map(|&i| x[i]));
            let fd = finite_difference_jacobian(restricted, &xi, 1e-6).unwrap();
            let analytic = DMatrix::from_fn(act.len(), act.len(), |a, b| jac.diag_block[a][b]);
            let dev = (&fd - &analytic).amax();
            assert!(dev <= 1e-5, "{alg} at {x:?}: deviation {dev:e}");
        }
    }
}

/// Full `DT` by differences: central in the free x columns, a much smaller
/// step in the zero x columns (the map is only one-sidedly smooth there for
/// DIRL₂ at rate √h) and forward in ε, whose domain ends at 0.
fn fd_full_jacobian(alg: Algorithm, p: &Problem, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let point = DVector::from_iterator(2 * n, x.iter().copied().chain(std::iter::repeat_n(0.0, n)));
    let steps: Vec<FdStep> = (0..2 * n)
        .map(|j| {
            if j >= n {
                FdStep::Forward(1e-6)
            } else if x[j] == 0.0 {
                FdStep::Central(1e-14)
            } else {
                FdStep::Central(1e-6)
            }
        })
        .collect();
    finite_difference_jacobian_with(stacked_map(alg, p, params()), &point, &steps).unwrap()
}

#[test]
fn triangular_spectrum_matches_general_eigensolver() {
    let p = Problem::benchmark2d();
    for alg in ALGS {
        for x in stationary_points() {
            let jac = fixed_point_jacobian(alg, &p, &x, &params()).unwrap();
            let fd = fd_full_jacobian(alg, &p, &x);
            let mut general: Vec<(f64, f64)> = fd.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
            general.sort_by(|a, b| a.0.total_cmp(&b.0));
            let blocks: Vec<f64> = jac.spectral_values().collect();
            assert_eq!(general.len(), blocks.len());
            for ((re, im), b) in general.iter().zip(&blocks) {
                assert!(im.abs() <= 1e-6, "{alg}: complex eigenvalue {re}+{im}i");
                assert!((re - b).abs() <= 1e-6, "{alg} at {x:?}: {general:?} vs {blocks:?}");
            }
            // the dense analytic assembly has the same spectrum
            let mut dense: Vec<f64> = jac.dense().complex_eigenvalues().iter().map(|c| c.re).collect();
            dense.sort_by(f64::total_cmp);
            for (d, b) in dense.iter().zip(&blocks) {
                assert!((d - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn jacobian_is_invertible_at_benchmark_points() {
    let p = Problem::benchmark2d();
    for alg in ALGS {
        for x in stationary_points() {
            let jac = fixed_point_jacobian(alg, &p, &x, &params()).unwrap();
            assert!(jac.min_modulus() > 1e-10);
            assert!(jac.dense().determinant().abs() > 1e-10);
        }
    }
}

#[test]
fn dirl2_partials_vanish_toward_the_origin() {
    let p = Problem::benchmark2d();
    let beta = params().beta;
    let s_map = |point: &DVector<f64>| {
        let x = point.rows(0, 2).into_owned();
        let eps = point.rows(2, 2).into_owned();
        subproblem_map(Algorithm::Dirl2, &p, beta, &x, &eps)
    };
    let mut previous: Option<(f64, f64)> = None;
    for t in [1e-2, 1e-3, 1e-4] {
        let point = DVector::from_column_slice(&[t, 1.0, t, 0.5]);
        let jac = finite_difference_jacobian(s_map, &point, t * 1e-3).unwrap();
        let (dx, de) = (jac[(0, 0)].abs(), jac[(0, 2)].abs());
        if let Some((px, pe)) = previous {
            assert!(dx < px && de < pe, "t = {t}: {dx:e} {de:e} after {px:e} {pe:e}");
        }
        previous = Some((dx, de));
    }
    let (dx, de) = previous.unwrap();
    assert!(dx < 1e-4 && de < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_diagonal_congruence_keeps_inertia(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        diag in prop::collection::vec(0.01f64..100.0, 4),
        shift in -1.5f64..1.5,
    ) {
        let b = DMatrix::from_column_slice(4, 4, &entries);
        let h = &b + b.transpose() + DMatrix::identity(4, 4) * shift;
        let s = DMatrix::from_fn(4, 4, |i, j| h[(i, j)] / (diag[i] * diag[j]).sqrt());
        let eh = symmetric_eigen(&h).unwrap();
        let es = symmetric_eigen(&s).unwrap();
        let count = |v: &DVector<f64>| v.iter().filter(|l| **l < -1e-9).count();
        prop_assume!(eh.eigenvalues.iter().all(|l| l.abs() > 1e-6));
        prop_assert_eq!(count(&eh.eigenvalues), count(&es.eigenvalues));
    }
}
