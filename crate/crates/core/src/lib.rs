//! Damped iteratively reweighted ℓ₁/ℓ₂ algorithms for
//!
//! ```text
//! min_x  F(x) = f(x) + λ Σ_i r(|x_i|)
//! ```
//!
//! with `f` smooth and `r` one of several concave sparsity-inducing penalties,
//! together with the tools to check what the iterates converge to:
//! stationarity residuals, restricted Hessians, strict-saddle classification
//! and the Jacobian of the damped fixed-point map.
//!
//! ```
//! use dirl_core::{problems::Problem, solvers::{run, SolverConfig}};
//! use nalgebra::DVector;
//!
//! let problem = Problem::benchmark2d();
//! let trace = run(&SolverConfig::default(), &problem, &DVector::from_vec(vec![3.0, 3.0])).unwrap();
//! assert!(trace.converged);
//! assert_eq!(trace.final_x[0], 0.0);
//! ```

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod ext_real;
pub mod jacobians;
pub mod problems;
pub mod regularizers;
pub mod selfcheck;
pub mod solvers;

pub use error::{Error, Result};
