//! Seeded multi-start experiments: many solves from random initial points,
//! limits clustered into basins and matched against classified stationary
//! points.

use std::path::Path;

use dirl_core::analysis::{check_support_identification, classify_stationary_point, Classification, ClassifyOptions};
use dirl_core::problems::{benchmark2d, Problem};
use dirl_core::selfcheck::descent_violation;
use dirl_core::solvers::{fixed_point_residual, run, validate_config, SolverConfig, TAIL_LEN};
use dirl_core::{Error, Result};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, TAG_INIT, TAG_PERTURBATION};

/// Radius used to merge limits into one stationary point.
pub const CLUSTER_RADIUS: f64 = 1e-3;

/// Linear tilt `v` in `F_v(x) = F(x) − ⟨v, x⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Perturbation {
    Vector(Vec<f64>),
    /// `v` uniform in `[−scale, scale]^n`, drawn from the experiment seed.
    Random {
        random_scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in name or path to a problem file.
    pub problem: String,
    #[serde(default)]
    pub solver: SolverConfig,
    pub num_inits: usize,
    /// `(lower, upper)` bounds of the sampling box.
    pub init_box: (Vec<f64>, Vec<f64>),
    pub seed: u64,
    pub saddle_radius: f64,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        Ok(config)
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        let mut errors = Vec::new();
        if self.num_inits == 0 {
            errors.push("num_inits must be at least 1".to_string());
        }
        let (lo, hi) = &self.init_box;
        if lo.len() != dimension || hi.len() != dimension {
            errors.push(format!("init_box bounds must have {dimension} entries"));
        } else if let Some(i) = (0..dimension).find(|&i| !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            errors.push(format!("init_box needs finite lower < upper, fails at coordinate {i}"));
        }
        if !(self.saddle_radius > 0.0) {
            errors.push("saddle_radius must be positive".to_string());
        }
        match &self.perturbation {
            Some(Perturbation::Vector(v)) if v.len() != dimension => {
                errors.push(format!("perturbation must have {dimension} entries"))
            }
            Some(Perturbation::Random { random_scale }) if !(*random_scale > 0.0) || !random_scale.is_finite() => {
                errors.push("perturbation random_scale must be positive".to_string())
            }
            _ => {}
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig { errors })
        }
    }
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitRecord {
    pub index: usize,
    pub init: Vec<f64>,
    pub final_x: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Active-set stationarity residual at the limit.
    pub residual: Option<f64>,
    /// `‖x − S^x(x, 0)‖_∞` at the last iterate.
    pub fixed_point_residual: Option<f64>,
    pub nearest_known_point: Option<usize>,
    pub distance: Option<f64>,
    pub descent_violation: Option<String>,
    /// Sign pattern constant over the last iterations of a converged run.
    pub support_stable: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Analytic,
    Discovered,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownPoint {
    pub id: usize,
    pub x: Vec<f64>,
    pub source: PointSource,
    /// `None` when the point could not be classified.
    pub classification: Option<Classification>,
    pub lambda_min: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinCount {
    pub point: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    pub basins: Vec<BasinCount>,
    pub unconverged: usize,
    pub failed: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.basins.iter().map(|b| b.count).sum::<usize>() + self.unconverged + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeSummary {
    pub problem: String,
    pub algorithm: dirl_core::solvers::Algorithm,
    pub seed: u64,
    pub num_inits: usize,
    pub saddle_radius: f64,
    pub perturbation: Option<Vec<f64>>,
    pub known_points: Vec<KnownPoint>,
    pub counts: Counts,
    /// Runs ending within `saddle_radius` of a strict saddle, over `num_inits`.
    pub fraction_at_saddle: f64,
    /// Converged runs whose limit is a degenerate stationary point.
    pub degenerate_limits: usize,
    pub records: Vec<InitRecord>,
}

fn draw_box(seed: u64, index: usize, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let mut rng = stream(seed, TAG_INIT, index as u64);
    DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..hi[i]))
}

fn resolve_perturbation(config: &ExperimentConfig, n: usize) -> Option<DVector<f64>> {
    match config.perturbation.as_ref()? {
        Perturbation::Vector(v) => Some(DVector::from_column_slice(v)),
        Perturbation::Random { random_scale } => {
            let mut rng = stream(config.seed, TAG_PERTURBATION, 0);
            Some(DVector::from_fn(n, |_, _| rng.gen_range(-random_scale..*random_scale)))
        }
    }
}

fn solve_one(config: &SolverConfig, problem: &Problem, index: usize, x0: DVector<f64>, lipschitz: f64) -> InitRecord {
    let mut record = InitRecord {
        index,
        init: x0.iter().copied().collect(),
        final_x: None,
        converged: false,
        iterations: 0,
        residual: None,
        fixed_point_residual: None,
        nearest_known_point: None,
        distance: None,
        descent_violation: None,
        support_stable: None,
        error: None,
    };
    match run(config, problem, &x0) {
        Ok(trace) => {
            record.final_x = Some(trace.final_x.iter().copied().collect());
            record.converged = trace.converged;
            record.iterations = trace.iterations;
            record.residual = Some(trace.final_residual);
            record.fixed_point_residual = Some(fixed_point_residual(
                config.algorithm,
                problem,
                config.beta,
                &trace.last_iterate,
            ));
            record.descent_violation = descent_violation(&trace, config, lipschitz);
            if trace.converged {
                record.support_stable = check_support_identification(&trace, TAIL_LEN).ok();
            }
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn classify_point(problem: &Problem, x: &[f64], id: usize, source: PointSource) -> KnownPoint {
    let xv = DVector::from_column_slice(x);
    let (classification, lambda_min, note) = match classify_stationary_point(problem, &xv, &ClassifyOptions::default())
    {
        Ok(rep) => (Some(rep.classification), rep.lambda_min, None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    KnownPoint {
        id,
        x: x.to_vec(),
        source,
        classification,
        lambda_min,
        note,
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs every solve on a pool of `workers` threads and aggregates by init
/// index, so the summary does not depend on the worker count.
pub fn run_escape(config: &ExperimentConfig, workers: usize) -> Result<EscapeSummary> {
    let base = Problem::from_name_or_path(&config.problem)?;
    let n = base.dimension();
    config.validate(n)?;
    let perturbation = resolve_perturbation(config, n);
    let problem = match &perturbation {
        Some(v) => base.with_linear_perturbation(v)?,
        None => base,
    };
    validate_config(&config.solver, &problem)?;
    let lipschitz = problem.estimate_lipschitz_gradient();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let (lo, hi) = &config.init_box;
    let mut records: Vec<InitRecord> = pool.install(|| {
        (0..config.num_inits)
            .into_par_iter()
            .map(|i| solve_one(&config.solver, &problem, i, draw_box(config.seed, i, lo, hi), lipschitz))
            .collect()
    });

    let mut known: Vec<KnownPoint> = Vec::new();
    if config.problem == "benchmark2d" && perturbation.is_none() {
        for x in benchmark2d::stationary_points() {
            let id = known.len();
            known.push(classify_point(&problem, &x, id, PointSource::Analytic));
        }
    }
    let mut members: Vec<usize> = vec![0; known.len()];
    let (mut unconverged, mut failed) = (0, 0);
    for rec in records.iter_mut() {
        let Some(fx) = rec.final_x.clone() else {
            failed += 1;
            continue;
        };
        let nearest = known
            .iter()
            .map(|k| distance(&k.x, &fx))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if !rec.converged {
            unconverged += 1;
            if let Some((id, d)) = nearest {
                rec.nearest_known_point = Some(id);
                rec.distance = Some(d);
            }
            continue;
        }
        let (id, d) = match nearest {
            Some((id, d)) if d <= CLUSTER_RADIUS => (id, d),
            _ => {
                let id = known.len();
                known.push(classify_point(&problem, &fx, id, PointSource::Discovered));
                members.push(0);
                (id, 0.0)
            }
        };
        members[id] += 1;
        rec.nearest_known_point = Some(id);
        rec.distance = Some(d);
    }

    let saddles: Vec<&KnownPoint> = known
        .iter()
        .filter(|k| k.classification == Some(Classification::StrictSaddle))
        .collect();
    let at_saddle = records
        .iter()
        .filter(|r| {
            r.final_x
                .as_ref()
                .is_some_and(|fx| saddles.iter().any(|s| distance(&s.x, fx) <= config.saddle_radius))
        })
        .count();
    let degenerate_limits = known
        .iter()
        .filter(|k| k.classification == Some(Classification::Degenerate))
        .map(|k| members[k.id])
        .sum();

    Ok(EscapeSummary {
        problem: config.problem.clone(),
        algorithm: config.solver.algorithm,
        seed: config.seed,
        num_inits: config.num_inits,
        saddle_radius: config.saddle_radius,
        perturbation: perturbation.map(|v| v.iter().copied().collect()),
        counts: Counts {
            basins: members
                .iter()
                .enumerate()
                .map(|(point, &count)| BasinCount { point, count })
                .collect(),
            unconverged,
            failed,
        },
        known_points: known,
        fraction_at_saddle: at_saddle as f64 / config.num_inits as f64,
        degenerate_limits,
        records,
    })
}
