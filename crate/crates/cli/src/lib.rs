//! Command-line front end: `solve`, `classify`, `escape` and `selfcheck`.
//!
//! Exit codes: 0 success, 1 error, 2 solve stopped at `max_iter`,
//! 3 `classify` given a non-stationary point.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod experiment;
pub mod rng;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dirl_core::Error;

use commands::{EscapeArgs, SolveArgs, EXIT_ERROR};

#[derive(Debug, Parser)]
#[command(name = "dirl", version, about = "Damped iteratively reweighted l1/l2 solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solve and write its trace and summary.
    Solve {
        /// Solver config (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in problem name or problem file.
        #[arg(long, default_value = "benchmark2d")]
        problem: String,
        /// `zeros`, `uniform`, `uniform:<seed>` or a literal vector like `3,3`.
        #[arg(long, default_value = "zeros", allow_hyphen_values = true)]
        x0: String,
        /// Output directory for trace.csv, states.jsonl and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Store x, ε and the subproblem solution at every recorded iteration.
        #[arg(long)]
        trace_full: bool,
    },
    /// Classify a candidate stationary point.
    Classify {
        #[arg(long, default_value = "benchmark2d")]
        problem: String,
        /// Point to classify, e.g. `0,1`.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Solver config supplying α, β, μ for the stability report.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Multi-start saddle-escape experiment.
    Escape {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the problem named in the config.
        #[arg(long)]
        problem: Option<String>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Summary file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property suites.
    Selfcheck,
}

fn report_error(e: &Error, err: &mut dyn Write) {
    match e {
        Error::InvalidConfig { errors } => {
            let _ = writeln!(err, "invalid configuration:");
            for line in errors {
                let _ = writeln!(err, "  - {line}");
            }
        }
        other => {
            let _ = writeln!(err, "error: {other}");
        }
    }
}

/// Executes a parsed command and returns its exit code.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = match &cli.command {
        Command::Solve {
            config,
            problem,
            x0,
            out: dir,
            seed,
            trace_full,
        } => commands::solve(
            &SolveArgs {
                config: config.as_deref(),
                problem,
                x0,
                out: dir.as_deref(),
                seed: *seed,
                trace_full: *trace_full,
            },
            out,
        ),
        Command::Classify { problem, x, config } => commands::classify(config.as_deref(), problem, x, out, err),
        Command::Escape {
            config,
            problem,
            seed,
            workers,
            out: path,
        } => commands::escape(
            &EscapeArgs {
                config,
                problem: problem.as_deref(),
                seed: *seed,
                workers: *workers,
                out: path.as_deref(),
            },
            out,
        ),
        Command::Selfcheck => commands::selfcheck(out),
    };
    result.unwrap_or_else(|e| {
        report_error(&e, err);
        EXIT_ERROR
    })
}
