//! Scenario runner for the `shotnoise` toolkit.
//!
//! Each command reads a [`scenario::Loaded`] scenario, writes versioned CSV
//! files into the output directory and returns a [`Report`] of named
//! quantities that the scenario's `expect` list is checked against.

pub mod commands;
pub mod output;
pub mod scenario;

use std::path::PathBuf;

use thiserror::Error;

use shotnoise::analysis::AnalysisError;
use shotnoise::model::config::ConfigError;
use shotnoise::model::ModelError;
use shotnoise::qsim::QsimError;

pub use output::{Check, Report};
pub use scenario::{Loaded, TaskKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("scenario line {line}, column {column} (at `{path}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
    #[error("unknown preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// What a command runs on.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: Loaded,
    /// Command-line seed if given, else the scenario's.
    pub seed: Option<u64>,
    /// Output directory; `None` computes without writing files.
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn new(loaded: Loaded, seed_override: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed_override.or(loaded.scenario.seed);
        Self { loaded, seed, out }
    }
}

/// Result of running a task: its report and the scenario's checks.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub checks: Vec<Check>,
}

impl Outcome {
    /// True when every check passed and the task recorded no errors.
    pub fn success(&self) -> bool {
        self.report.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

/// Validates, runs `task`, evaluates expectations and writes `summary.csv`.
pub fn execute(ctx: &Context, task: TaskKind) -> Result<Outcome, CliError> {
    ctx.loaded.validate_for(task, ctx.seed)?;
    let mut report = match task {
        TaskKind::Predict => commands::predict::run(ctx)?,
        TaskKind::Simulate => commands::simulate::run(ctx)?,
        TaskKind::Sweep => commands::sweep::run(ctx)?,
        TaskKind::Fit => commands::fit::run(ctx)?,
        TaskKind::Calibrate => commands::calibrate::run(ctx)?,
    };
    let checks = output::evaluate(&report, &ctx.loaded.scenario.expect);
    output::write_summary(ctx, &mut report, &checks)?;
    Ok(Outcome { report, checks })
}
