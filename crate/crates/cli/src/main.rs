use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use shotnoise_cli::commands::selftest;
use shotnoise_cli::scenario::{FitBlock, FitModel, ReequilibrationBlock, Scenario, PRESETS};
use shotnoise_cli::{execute, Context, Loaded, TaskKind};

#[derive(Parser)]
#[command(
    name = "shotnoise",
    version,
    about = "Photon shot-noise dephasing: predictions, simulations, sweeps and fits"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for stochastic tasks (overrides the scenario's).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "SHOTNOISE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenario (see `presets`).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Fringe CSV files; alternatively give a scenario with a `fit` block.
    files: Vec<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "decaying_sine")]
    model: String,
    /// Cavity decay rate kappa/2pi for the reequilibration model.
    #[arg(long)]
    kappa_khz: Option<f64>,
    /// Fixed occupancy; fitted when omitted.
    #[arg(long)]
    n_bar: Option<f64>,
    #[arg(long, default_value_t = 0)]
    select_n: u32,
    #[arg(long)]
    t1_us: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Thermal coherence budget versus temperature.
    Predict(Source),
    /// Simulate a fringe and fit it.
    Simulate(Source),
    /// Simulate and fit over a swept parameter.
    Sweep(Source),
    /// Fit fringe CSV files.
    Fit(FitArgs),
    /// Photon-number calibration from peak amplitudes.
    Calibrate(Source),
    /// Run the task named in the scenario.
    Run(Source),
    /// Quick built-in consistency checks.
    Selftest,
    /// List presets, or print one.
    Presets { name: Option<String> },
}

fn load(source: &Source) -> Result<Loaded> {
    match (&source.scenario, &source.preset) {
        (Some(path), _) => Ok(Loaded::from_path(path)?),
        (None, Some(name)) => Ok(Loaded::from_preset(name)?),
        (None, None) => bail!("give --scenario or --preset"),
    }
}

fn fit_scenario(args: &FitArgs) -> Result<Loaded> {
    if args.scenario.is_some() || args.preset.is_some() {
        if !args.files.is_empty() {
            bail!("give input files or a scenario, not both");
        }
        return load(&Source {
            scenario: args.scenario.clone(),
            preset: args.preset.clone(),
        });
    }
    if args.files.is_empty() {
        bail!("no input files");
    }
    let model: FitModel = serde_json::from_value(serde_json::Value::String(args.model.clone()))
        .context("unknown --model")?;
    let reequilibration = args.kappa_khz.map(|kappa_khz| ReequilibrationBlock {
        kappa_khz,
        n_bar: args.n_bar,
        n_bar_guess: 0.5,
        select_n: args.select_n,
        t1_us: args.t1_us,
    });
    let scenario = Scenario {
        name: "fit".into(),
        description: String::new(),
        system: None,
        system_file: None,
        task: TaskKind::Fit,
        seed: None,
        predict: None,
        simulate: None,
        sweep: None,
        fit: Some(FitBlock {
            inputs: args.files.iter().map(|p| p.display().to_string()).collect(),
            model,
            reequilibration,
        }),
        calibrate: None,
        expect: Vec::new(),
    };
    Ok(Loaded::from_text(
        &serde_json::to_string_pretty(&scenario)?,
        &PathBuf::new(),
    )?)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let (loaded, task) = match &cli.command {
        Command::Predict(s) => (load(s)?, TaskKind::Predict),
        Command::Simulate(s) => (load(s)?, TaskKind::Simulate),
        Command::Sweep(s) => (load(s)?, TaskKind::Sweep),
        Command::Calibrate(s) => (load(s)?, TaskKind::Calibrate),
        Command::Fit(a) => (fit_scenario(a)?, TaskKind::Fit),
        Command::Run(s) => {
            let loaded = load(s)?;
            let task = loaded.scenario.task;
            (loaded, task)
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{}", c.line());
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::Presets { name: None } => {
            for (name, _) in PRESETS {
                let loaded = Loaded::from_preset(name)?;
                println!("{name:8} {}", loaded.scenario.description);
            }
            return Ok(true);
        }
        Command::Presets { name: Some(name) } => {
            print!("{}", shotnoise_cli::scenario::preset_text(name)?);
            return Ok(true);
        }
    };

    let ctx = Context::new(loaded, cli.seed, Some(cli.out.clone()));
    let outcome = execute(&ctx, task)?;
    let report = &outcome.report;
    println!("{} ({})", ctx.loaded.scenario.name, report.command);
    print!("{}", report.table);
    for note in &report.notes {
        log::warn!("{note}");
    }
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    for c in &outcome.checks {
        println!("{}", c.line());
    }
    for f in &report.files {
        log::info!("wrote {}", f.display());
    }
    Ok(outcome.success())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
