use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{summarize_limit, Algorithm, IterateState, SolverConfig, TAIL_LEN};
use crate::analysis::{StationarityReport, SupportPattern};
use crate::error::Result;
use crate::problems::Problem;
use crate::regularizers::Penalty;

/// Per-iteration summary. Vectors are present only when the run was
/// configured with `record_full`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub k: usize,
    #[serde(rename = "F_perturbed")]
    pub f_perturbed: f64,
    pub step_norm: f64,
    pub step_norm_sq: f64,
    /// `Σ_{t<k} ‖x^{t+1} − x^t‖²`.
    pub cumulative_step_sq: f64,
    pub eps_inf: f64,
    /// Sign pattern of the subproblem solution that produced `x^k`.
    pub support: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y: Option<Vec<f64>>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub algorithm: Algorithm,
    pub states: Vec<StateRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// Limit estimate: the last iterate with coordinates that were still
    /// contracting geometrically to zero set to exactly zero.
    pub final_x: DVector<f64>,
    pub last_iterate: DVector<f64>,
    pub final_eps: DVector<f64>,
    pub final_y: DVector<f64>,
    /// Active-set residual of the first-order conditions at `final_x`.
    pub final_residual: f64,
    pub stationarity: StationarityReport,
    pub limit_support: SupportPattern,
    /// `max_k ‖x^k − ∇f(x^k)/β‖_∞`.
    pub gradient_step_bound: f64,
    /// Last iterates, oldest first.
    pub tail: Vec<DVector<f64>>,
}

impl SolveTrace {
    pub fn initial_value(&self) -> f64 {
        self.states[0].f_perturbed
    }

    pub fn final_state(&self) -> &StateRecord {
        self.states.last().expect("trace is never empty")
    }
}

pub(super) struct Recorder<'a, R> {
    config: &'a SolverConfig,
    problem: &'a Problem<R>,
    states: Vec<StateRecord>,
    tail: VecDeque<DVector<f64>>,
    cumulative_step_sq: f64,
    gradient_step_bound: f64,
}

impl<'a, R: Penalty> Recorder<'a, R> {
    pub(super) fn new(config: &'a SolverConfig, problem: &'a Problem<R>) -> Self {
        Self {
            config,
            problem,
            states: Vec::new(),
            tail: VecDeque::with_capacity(TAIL_LEN + 1),
            cumulative_step_sq: 0.0,
            gradient_step_bound: 0.0,
        }
    }

    pub(super) fn push(&mut self, state: &IterateState, support: String, force: bool) {
        self.cumulative_step_sq += state.step_norm_sq;
        let grad = self.problem.smooth().gradient(&state.x);
        let bound = (&state.x - grad / self.config.beta).amax();
        self.gradient_step_bound = self.gradient_step_bound.max(bound);

        if self.tail.len() == TAIL_LEN {
            self.tail.pop_front();
        }
        self.tail.push_back(state.x.clone());

        if !(force || state.k.is_multiple_of(self.config.record_every)) {
            return;
        }
        if self.states.last().is_some_and(|s| s.k == state.k) {
            return;
        }
        let full = self.config.record_full;
        self.states.push(StateRecord {
            k: state.k,
            f_perturbed: state.f_perturbed,
            step_norm: state.step_norm,
            step_norm_sq: state.step_norm_sq,
            cumulative_step_sq: self.cumulative_step_sq,
            eps_inf: state.eps.amax(),
            support,
            x: full.then(|| state.x.iter().copied().collect()),
            eps: full.then(|| state.eps.iter().copied().collect()),
            y: full.then(|| state.y.iter().copied().collect()),
        });
    }

    pub(super) fn finish(self, state: IterateState, converged: bool) -> SolveTrace {
        let tail: Vec<DVector<f64>> = self.tail.into_iter().collect();
        let (final_x, limit_support, stationarity) = summarize_limit(self.problem, &tail);
        SolveTrace {
            algorithm: self.config.algorithm,
            states: self.states,
            converged,
            iterations: state.k,
            final_residual: stationarity.residual_active,
            final_x,
            last_iterate: state.x,
            final_eps: state.eps,
            final_y: state.y,
            stationarity,
            limit_support,
            gradient_step_bound: self.gradient_step_bound,
            tail,
        }
    }
}

/// CSV with header `k,F_perturbed,step_norm,eps_inf,support_bits`.
pub fn write_trace_csv<W: Write>(trace: &SolveTrace, mut out: W) -> Result<()> {
    writeln!(out, "k,F_perturbed,step_norm,eps_inf,support_bits")?;
    for s in &trace.states {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{}",
            s.k, s.f_perturbed, s.step_norm, s.eps_inf, s.support
        )?;
    }
    Ok(())
}

/// One JSON object per recorded state.
pub fn write_states_jsonl<W: Write>(trace: &SolveTrace, mut out: W) -> Result<()> {
    for s in &trace.states {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
