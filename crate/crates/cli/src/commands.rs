use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use dirl_core::analysis::{
    classify_stationary_point, stationarity_residual, ClassifyOptions, SaddleReport, StationarityReport,
    DEFAULT_SUPPORT_TOL,
};
use dirl_core::jacobians::{
    empirical_subproblem_lipschitz, saddle_unstable_equivalence, EquivalenceReport, LipschitzEstimate,
};
use dirl_core::problems::Problem;
use dirl_core::selfcheck::{run_all, CheckOutcome};
use dirl_core::solvers::{
    fixed_point_residual, lipeomorphism_report, run, validate_config, write_states_jsonl, write_trace_csv, Algorithm,
    LipeomorphismReport, SolverConfig, ValidationReport,
};
use dirl_core::{Error, Result};
use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::experiment::{run_escape, ExperimentConfig};
use crate::rng::{stream, TAG_X0};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_MAX_ITER: u8 = 2;
pub const EXIT_NOT_STATIONARY: u8 = 3;

/// Stationarity gate of the `classify` command.
pub const CLASSIFY_TOL: f64 = 1e-4;

/// Box used by `--x0 uniform`.
pub const UNIFORM_X0_BOX: (f64, f64) = (-1.0, 1.0);

pub fn load_solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    match path {
        None => Ok(SolverConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// `zeros`, `uniform`, `uniform:<seed>` or a literal such as `3,3` or `[3, 3]`.
pub fn parse_x0(text: &str, n: usize, default_seed: u64) -> Result<DVector<f64>> {
    let text = text.trim();
    if text == "zeros" {
        return Ok(DVector::zeros(n));
    }
    if let Some(rest) = text.strip_prefix("uniform") {
        let seed = match rest.strip_prefix(':') {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("bad seed in --x0 {text:?}")))?,
            None if rest.is_empty() => default_seed,
            None => return Err(Error::InvalidArgument(format!("unrecognized --x0 value {text:?}"))),
        };
        let mut rng = stream(seed, TAG_X0, 0);
        let (lo, hi) = UNIFORM_X0_BOX;
        return Ok(DVector::from_fn(n, |_, _| rng.gen_range(lo..hi)));
    }
    let values = parse_vector(text)?;
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "x0",
            expected: n,
            got: values.len(),
        });
    }
    Ok(DVector::from_vec(values))
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse {s:?} as a number")))
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub algorithm: Algorithm,
    pub converged: bool,
    pub iterations: usize,
    pub final_x: Vec<f64>,
    pub last_iterate: Vec<f64>,
    pub final_eps: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
    pub fixed_point_residual: f64,
    pub stationarity: StationarityReport,
    pub classification: Option<SaddleReport>,
    pub classification_error: Option<String>,
    pub validation: ValidationReport,
    pub lipeomorphism: LipeomorphismReport,
    /// Present for full traces only.
    pub subproblem_lipschitz: Option<LipschitzEstimate>,
}

pub struct SolveArgs<'a> {
    pub config: Option<&'a Path>,
    pub problem: &'a str,
    pub x0: &'a str,
    pub out: Option<&'a Path>,
    pub seed: u64,
    pub trace_full: bool,
}

fn write_json<T: Serialize>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn solve(args: &SolveArgs, out: &mut dyn Write) -> Result<u8> {
    let mut config = load_solver_config(args.config)?;
    if args.trace_full {
        config.record_full = true;
    }
    let problem = Problem::from_name_or_path(args.problem)?;
    let x0 = parse_x0(args.x0, problem.dimension(), args.seed)?;
    let validation = validate_config(&config, &problem)?;
    let trace = run(&config, &problem, &x0)?;

    let opts = ClassifyOptions::default();
    let (classification, classification_error) = match classify_stationary_point(&problem, &trace.final_x, &opts) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let subproblem_lipschitz = if config.record_full {
        let full: Vec<_> = trace
            .states
            .iter()
            .filter_map(|s| Some((DVector::from_vec(s.x.clone()?), DVector::from_vec(s.eps.clone()?))))
            .collect();
        let stride = (full.len() / 20).max(1);
        let sample: Vec<_> = full.into_iter().step_by(stride).collect();
        Some(empirical_subproblem_lipschitz(
            config.algorithm,
            &problem,
            &config.map_params(),
            &sample,
            1e-6,
        )?)
    } else {
        None
    };
    let summary = SolveSummary {
        algorithm: config.algorithm,
        converged: trace.converged,
        iterations: trace.iterations,
        final_x: trace.final_x.iter().copied().collect(),
        last_iterate: trace.last_iterate.iter().copied().collect(),
        final_eps: trace.final_eps.iter().copied().collect(),
        objective: problem.objective_value(&trace.final_x)?,
        residual: trace.final_residual,
        fixed_point_residual: fixed_point_residual(config.algorithm, &problem, config.beta, &trace.last_iterate),
        stationarity: trace.stationarity.clone(),
        classification,
        classification_error,
        validation,
        lipeomorphism: lipeomorphism_report(&config, &problem, &trace),
        subproblem_lipschitz,
    };

    match args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_trace_csv(&trace, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
            write_states_jsonl(&trace, BufWriter::new(File::create(dir.join("states.jsonl"))?))?;
            write_json(&summary, BufWriter::new(File::create(dir.join("summary.json"))?))?;
        }
        None => write_json(&summary, &mut *out)?,
    }
    Ok(if trace.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

#[derive(Debug, Serialize)]
pub struct ClassifyOutput {
    pub x: Vec<f64>,
    pub stationarity: StationarityReport,
    pub saddle: SaddleReport,
    /// Fixed-point stability per algorithm, or why it is unavailable.
    pub stability: Vec<StabilityEntry>,
}

#[derive(Debug, Serialize)]
pub struct StabilityEntry {
    pub algorithm: Algorithm,
    pub report: Option<EquivalenceReport>,
    pub error: Option<String>,
}

/// `Ok(Err(residual))` when the point fails the stationarity gate.
pub fn classify_point(
    problem: &Problem,
    x: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Result<ClassifyOutput, f64>> {
    let stationarity = stationarity_residual(problem, x, DEFAULT_SUPPORT_TOL, CLASSIFY_TOL)?;
    if !stationarity.is_stationary {
        let residual = if stationarity.residual_active > CLASSIFY_TOL {
            stationarity.residual_active
        } else {
            stationarity.margin_inactive
        };
        return Ok(Err(residual));
    }
    let opts = ClassifyOptions {
        tol_residual: CLASSIFY_TOL,
        ..ClassifyOptions::default()
    };
    let saddle = classify_stationary_point(problem, x, &opts)?;
    let stability = [Algorithm::Dirl1, Algorithm::Dirl2]
        .into_iter()
        .map(
            |algorithm| match saddle_unstable_equivalence(problem, x, &config.map_params(), algorithm, None) {
                Ok(r) => StabilityEntry {
                    algorithm,
                    report: Some(r),
                    error: None,
                },
                Err(e) => StabilityEntry {
                    algorithm,
                    report: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    Ok(Ok(ClassifyOutput {
        x: x.iter().copied().collect(),
        stationarity,
        saddle,
        stability,
    }))
}

pub fn classify(config: Option<&Path>, problem: &str, x: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let config = load_solver_config(config)?;
    let problem = Problem::from_name_or_path(problem)?;
    let values = parse_vector(x)?;
    if values.len() != problem.dimension() {
        return Err(Error::DimensionMismatch {
            context: "x",
            expected: problem.dimension(),
            got: values.len(),
        });
    }
    match classify_point(&problem, &DVector::from_vec(values), &config)? {
        Ok(report) => {
            write_json(&report, &mut *out)?;
            Ok(EXIT_OK)
        }
        Err(residual) => {
            writeln!(err, "not stationary: residual {residual:e} exceeds {CLASSIFY_TOL:e}")?;
            Ok(EXIT_NOT_STATIONARY)
        }
    }
}

pub struct EscapeArgs<'a> {
    pub config: &'a Path,
    pub problem: Option<&'a str>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: Option<&'a Path>,
}

pub fn escape(args: &EscapeArgs, out: &mut dyn Write) -> Result<u8> {
    let mut config = ExperimentConfig::load(args.config)?;
    if let Some(p) = args.problem {
        config.problem = p.to_string();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let summary = run_escape(&config, args.workers)?;
    match args.out {
        Some(path) => write_json(&summary, BufWriter::new(File::create(path)?))?,
        None => write_json(&summary, &mut *out)?,
    }
    Ok(EXIT_OK)
}

pub fn format_outcomes(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    outcomes
        .iter()
        .map(|o| {
            let status = if o.passed { "PASS" } else { "FAIL" };
            format!("{status}  {:width$}  {}\n", o.name, o.detail)
        })
        .collect()
}

pub fn selfcheck(out: &mut dyn Write) -> Result<u8> {
    let outcomes = run_all();
    out.write_all(format_outcomes(&outcomes).as_bytes())?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    writeln!(out, "{} checks, {failed} failed", outcomes.len())?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_ERROR })
}
