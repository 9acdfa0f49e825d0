//! `q4fp`: scenario generation and budgeted portfolio selection from the command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use q4fp_core::aur::{run_q4futurepop, solve_with_reduction};
use q4fp_core::config::{with_threads, RunConfig};
use q4fp_core::market_data::{
    compounded_returns, covariance, daily_returns, load_prices_csv, write_prices_csv, PriceMatrix,
};
use q4fp_core::pdg::{generate_scenario, load_targets_csv, ScenarioSpec};
use q4fp_core::qubo::{build_qubo, BitLayout};
use q4fp_core::report::{scenario_info, FinalReport};
use q4fp_core::synth::synthetic_history;
use q4fp_core::{Error, ErrorClass, Result};

const SCENARIO_FILE: &str = "scenario.csv";
const REPORT_FILE: &str = "report.json";
const HISTORY_FILE: &str = "history.csv";
const QUBO_FILE: &str = "qubo.txt";

#[derive(Debug, Parser)]
#[command(
    name = "q4fp",
    version,
    about = "Portfolio optimization on generated future price scenarios"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Configuration file: `key = value` lines, or a JSON object (a previous report works too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Solver backend: sa, exhaustive.
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Worker threads (0 = one per core). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any configuration key, e.g. `--set qubo.levels=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a future price scenario from a history and return targets.
    Predict(ScenarioArgs),
    /// Reduce the universe and solve the portfolio problem on a dataset.
    Solve(DatasetArgs),
    /// Generate a scenario and solve on it.
    Pipeline(ScenarioArgs),
    /// Write a synthetic price history.
    Synth {
        #[arg(long, default_value_t = 5)]
        assets: usize,
        #[arg(long, default_value_t = 250)]
        days: usize,
    },
    /// Dump the QUBO built from a dataset.
    Qubo(DatasetArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Historical price CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Targets CSV: `ticker,expected_return[,initial_value]`.
    #[arg(long)]
    targets: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Price CSV to optimize over.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Input => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Config => 4,
    }
}

fn fail(class: ErrorClass, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": class.as_str(), "message": message });
    eprintln!("{line}");
    ExitCode::from(exit_code(class))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(
                ErrorClass::Config,
                e.to_string().lines().next().unwrap_or("invalid arguments"),
            )
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.class(), &e.to_string()),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut config = RunConfig::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        config.apply_file_contents(&text)?;
    }
    match &cli.command {
        Command::Predict(a) | Command::Pipeline(a) => {
            if let Some(p) = &a.history {
                config.history = Some(p.clone());
            }
            if let Some(p) = &a.targets {
                config.targets = Some(p.clone());
            }
        }
        Command::Solve(a) | Command::Qubo(a) => {
            if let Some(p) = &a.dataset {
                config.dataset = Some(p.clone());
            }
        }
        Command::Synth { .. } => {}
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.out = out.clone();
    }
    if let Some(solver) = &g.solver {
        config.qcs.solver.backend = solver.clone();
    }
    if let Some(threads) = g.threads {
        config.threads = threads;
    }
    for item in &g.overrides {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("--set expects KEY=VALUE, got {item:?}"))
        })?;
        config.set(k.trim(), v)?;
    }
    config.validate()?;
    Ok(config)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::InvalidParameter(format!("{key} is required (--{key} or `{key} = ...`)"))
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let threads = config.threads;
    with_threads(threads, move || match cli.command {
        Command::Predict(_) => predict(&config),
        Command::Solve(_) => solve(&config),
        Command::Pipeline(_) => pipeline(&config),
        Command::Synth { assets, days } => synth(&config, assets, days),
        Command::Qubo(_) => dump_qubo(&config),
    })?
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_prices(path: &Path) -> Result<PriceMatrix> {
    load_prices_csv(open(path)?)
}

fn scenario_inputs(config: &RunConfig) -> Result<(PriceMatrix, ScenarioSpec)> {
    let hist = load_prices(required(&config.history, "history")?)?;
    let targets = load_targets_csv(open(required(&config.targets, "targets")?)?, hist.tickers())?;
    let mut spec = ScenarioSpec::from_history(&hist, targets.expected_returns, config.pdg_seed());
    if let Some(initial) = targets.initial_values {
        spec.initial_values = initial;
    }
    if let Some(h) = config.horizon {
        spec.horizon_returns = h;
    }
    Ok((hist, spec))
}

fn output_path(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.out)?;
    Ok(config.out.join(name))
}

fn write_prices(config: &RunConfig, name: &str, prices: &PriceMatrix) -> Result<PathBuf> {
    let path = output_path(config, name)?;
    let mut w = BufWriter::new(File::create(&path)?);
    write_prices_csv(prices, &mut w)?;
    w.flush()?;
    Ok(path)
}

fn write_report(config: &RunConfig, report: &FinalReport) -> Result<PathBuf> {
    let path = output_path(config, REPORT_FILE)?;
    fs::write(&path, report.to_json()?)?;
    Ok(path)
}

fn predict(config: &RunConfig) -> Result<()> {
    let (hist, spec) = scenario_inputs(config)?;
    let scenario = generate_scenario(&hist, &spec)?;
    let path = write_prices(config, SCENARIO_FILE, &scenario)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn solve(config: &RunConfig) -> Result<()> {
    let data = load_prices(required(&config.dataset, "dataset")?)?;
    let solution = solve_with_reduction(&data, &config.aur, &config.qcs, config.solver_seed())?;
    let report = FinalReport::new(&solution, config, None);
    let path = write_report(config, &report)?;
    print!("{}", report.summary());
    println!("wrote {}", path.display());
    Ok(())
}

fn pipeline(config: &RunConfig) -> Result<()> {
    let (hist, spec) = scenario_inputs(config)?;
    let out = run_q4futurepop(&hist, &spec, &config.aur, &config.qcs, config.solver_seed())?;
    let info = scenario_info(
        hist.tickers(),
        &spec.target_returns,
        spec.seed,
        spec.horizon_returns,
    );
    let report = FinalReport::new(&out.solution, config, Some(info));
    let scenario_path = write_prices(config, SCENARIO_FILE, &out.scenario)?;
    let report_path = write_report(config, &report)?;
    print!("{}", report.summary());
    println!("wrote {}", scenario_path.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

fn synth(config: &RunConfig, assets: usize, days: usize) -> Result<()> {
    let prices = synthetic_history(assets, days, config.seed)?;
    let path = write_prices(config, HISTORY_FILE, &prices)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dump_qubo(config: &RunConfig) -> Result<()> {
    let data = load_prices(required(&config.dataset, "dataset")?)?;
    let er = compounded_returns(&data);
    let cov = covariance(&daily_returns(&data))?;
    let layout = BitLayout::new(data.n_assets(), config.qcs.levels)?;
    let qubo = build_qubo(&er, &cov, layout, config.qcs.multipliers, config.qcs.budget)?;
    let path = output_path(config, QUBO_FILE)?;
    let mut w = BufWriter::new(File::create(&path)?);
    qubo.write_dump(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}
