//! The `collapse-lab` command line.
//!
//! ```text
//! collapse-lab run <config.json> [--plot] [--out DIR]
//! collapse-lab verify <suite>
//! ```
//!
//! Exit codes: 0 success, 1 I/O or numeric failure, 2 invalid input
//! (nothing is written), 3 a solver did not converge.

pub mod config;
pub mod experiments;
pub mod svg;
pub mod verify;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{Map, Number, Value};

use crate::error::LabError;
use config::{parse_config, ExperimentConfig};
use experiments::{run_experiment, Artifacts, Cell};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "COLLAPSE_LAB_THREADS";

const DEFAULT_OUT: &str = "collapse-lab-out";

#[derive(Debug, Parser)]
#[command(name = "collapse-lab", version, about = "Norm-constrained softmax geometry experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Also write plot.svg with the primary trace.
        #[arg(long)]
        plot: bool,
        /// Output directory (overrides "out" in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an invariant suite: oracle, hessian, collapse, penultimate, ode, margin or all.
    Verify { suite: String },
}

/// Error raised by the command handlers, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self { code: EXIT_FAILURE, message: format!("{}: {err}", path.display()) }
    }
}

impl From<LabError> for CliError {
    fn from(err: LabError) -> Self {
        let code = match err {
            LabError::InvalidArgument(_) | LabError::UnsupportedNorm(_) => EXIT_INVALID,
            LabError::NonConverged { .. } => EXIT_NOT_CONVERGED,
            LabError::NumericFailure(_) => EXIT_FAILURE,
        };
        Self { code, message: err.to_string() }
    }
}

/// Parses `COLLAPSE_LAB_THREADS`; `None` when unset.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError {
                code: EXIT_INVALID,
                message: format!("{THREADS_ENV} must be a positive integer, got {v:?}"),
            }),
        },
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError { code: EXIT_FAILURE, message: e.to_string() })
}

/// Formats a float so that it parses back to the same value.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn csv_bytes(artifacts: &Artifacts) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(artifacts.columns)?;
    for row in &artifacts.rows {
        w.write_record(row.iter().map(|c| match *c {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => format_number(x),
            Cell::Empty => String::new(),
        }))?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Flat report with the seed echoed. Non-finite values are dropped, since
/// JSON has no representation for them.
pub fn report_json(artifacts: &Artifacts, seed: u64) -> String {
    let mut map = Map::new();
    for (key, v) in &artifacts.report {
        if let Some(n) = Number::from_f64(*v) {
            map.insert(key.clone(), Value::Number(n));
        }
    }
    map.insert("seed".into(), Value::Number(seed.into()));
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("serializable map");
    s.push('\n');
    s
}

fn write_artifacts(dir: &Path, artifacts: &Artifacts, seed: u64, plot: bool) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv_path = dir.join("results.csv");
    let bytes = csv_bytes(artifacts).map_err(|e| CliError::io(&csv_path, e))?;
    fs::write(&csv_path, bytes).map_err(|e| CliError::io(&csv_path, e))?;
    let json_path = dir.join("report.json");
    fs::write(&json_path, report_json(artifacts, seed)).map_err(|e| CliError::io(&json_path, e))?;
    if plot {
        let svg_path = dir.join("plot.svg");
        fs::write(&svg_path, artifacts.chart.to_svg()).map_err(|e| CliError::io(&svg_path, e))?;
    }
    Ok(())
}

fn run_cell(config: &ExperimentConfig, dir: &Path, plot: bool) -> Result<(), CliError> {
    let artifacts = run_experiment(config)?;
    write_artifacts(dir, &artifacts, config.seed(), plot)
}

/// `collapse-lab run`.
pub fn run_command(config_path: &Path, plot: bool, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(config_path).map_err(|e| CliError {
        code: EXIT_INVALID,
        message: format!("{}: {e}", config_path.display()),
    })?;
    let plan = parse_config(&text)?;
    let pool = thread_pool()?;
    let dir = out
        .map(Path::to_path_buf)
        .or(plan.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    if !plan.is_grid {
        let (_, config) = &plan.cells[0];
        pool.install(|| run_cell(config, &dir, plot))?;
        return Ok(dir);
    }

    let outcomes: Vec<Result<(), CliError>> = pool.install(|| {
        plan.cells
            .par_iter()
            .enumerate()
            .map(|(i, (_, config))| run_cell(config, &dir.join(format!("cell_{i:03}")), plot))
            .collect()
    });
    let mut summary = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let summary_path = dir.join("grid.csv");
    let csv_err = |e: csv::Error| CliError::io(&summary_path, e);
    summary.write_record(["cell", "directory", "overrides", "exit_code"]).map_err(csv_err)?;
    let mut worst = EXIT_OK;
    for (i, ((overrides, _), outcome)) in plan.cells.iter().zip(&outcomes).enumerate() {
        let code = match outcome {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("cell {i}: {}", e.message);
                e.code
            }
        };
        worst = worst.max(code);
        let overrides = serde_json::to_string(&Value::Object(overrides.clone())).expect("serializable map");
        summary
            .write_record([i.to_string(), format!("cell_{i:03}"), overrides, code.to_string()])
            .map_err(csv_err)?;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let bytes = summary.into_inner().map_err(|e| CliError::io(&summary_path, e.error()))?;
    fs::write(&summary_path, bytes).map_err(|e| CliError::io(&summary_path, e))?;
    if worst == EXIT_OK {
        Ok(dir)
    } else {
        Err(CliError { code: worst, message: format!("{} of {} grid cells failed", outcomes.iter().filter(|o| o.is_err()).count(), outcomes.len()) })
    }
}

/// `collapse-lab verify`: prints one line per check and returns whether all passed.
pub fn verify_command(suite: &str, sink: &mut impl std::io::Write) -> Result<bool, CliError> {
    let pool = thread_pool()?;
    let checks = pool.install(|| verify::run_suite(suite))?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        writeln!(sink, "{c}").map_err(|e| CliError { code: EXIT_FAILURE, message: e.to_string() })?;
    }
    writeln!(sink, "{} checks, {} passed, {} failed", checks.len(), checks.len() - failed, failed)
        .map_err(|e| CliError { code: EXIT_FAILURE, message: e.to_string() })?;
    Ok(failed == 0)
}

/// Runs the command line and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run { config, plot, out } => run_command(&config, plot, out.as_deref()).map(|dir| {
            eprintln!("wrote results to {}", dir.display());
            EXIT_OK
        }),
        Command::Verify { suite } => {
            let stdout = std::io::stdout();
            verify_command(&suite, &mut stdout.lock()).map(|ok| if ok { EXIT_OK } else { EXIT_FAILURE })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message);
            e.code
        }
    }
}
