use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use culdiv_core::pipeline::{self, InputPaths, RecoverySettings};
use culdiv_core::{Convergence, Error, ErrorStructure, FitOptions, ModelSpec, RegressorSet, SimulationConfig, WorldConfig};

mod config;

use config::FileConfig;

const EXIT_INPUT: u8 = 1;
const EXIT_NO_CONVERGENCE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

/// Cultural level and diversity indicators from migrant stocks, plus the
/// governance regression built on them.
#[derive(Debug, Parser)]
#[command(name = "culdiv", version)]
struct Cli {
    /// TOML file with defaults for any flag (keys use underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute CLI/CDI indicators and migrant-share weights.
    Indicators(IndicatorsArgs),
    /// Fit the governance regression.
    Fit(FitArgs),
    /// Write a synthetic dataset, optionally with a recovery study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    hofstede: Option<PathBuf>,
    #[arg(long)]
    migrants: Option<PathBuf>,
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long)]
    wgi: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Neighbours used to impute missing Hofstede scores [default: 5].
    #[arg(long)]
    k_neighbors: Option<usize>,
}

#[derive(Debug, Args)]
struct IndicatorsArgs {
    #[command(flatten)]
    inputs: InputArgs,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// hofstede | level | level_diversity [default: level_diversity]
    #[arg(long)]
    regressors: Option<String>,
    /// independent | spatial | serial | sur | all [default: all]
    #[arg(long)]
    error_structure: Option<String>,
    /// Fit all 15 regressor-set and error-structure combinations.
    #[arg(long)]
    compare: bool,
    /// Use indicators from a previous `indicators` run.
    #[arg(long)]
    indicators: Option<PathBuf>,
    /// Optimizer iteration cap [default: 500].
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Countries with complete data [default: 40].
    #[arg(long)]
    countries: Option<usize>,
    /// Periods [default: 5].
    #[arg(long)]
    periods: Option<usize>,
    /// Spatial coefficient shared by all equations [default: 0.15].
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Serial coefficient shared by all equations [default: 0.8].
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
    /// Regressor set used to generate governance scores [default: level_diversity].
    #[arg(long)]
    regressors: Option<String>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Also run a parameter-recovery study on simulated panels.
    #[arg(long)]
    recover: bool,
    /// Recovery replications [default: 20].
    #[arg(long)]
    replications: Option<usize>,
    /// Equations in the recovery panels [default: 2].
    #[arg(long)]
    equations: Option<usize>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { EXIT_INPUT } else { EXIT_INTERNAL },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(input_error)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Indicators(args) => indicators(args, &file),
        Command::Fit(args) => fit(args, &file),
        Command::Simulate(args) => simulate(args, &file),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| input_error(format!("missing --{name} (or `{}` in the config file)", name.replace('-', "_"))))
}

fn input_paths(args: &InputArgs, file: &FileConfig) -> Result<InputPaths, Failure> {
    Ok(InputPaths {
        registry: required(args.registry.clone(), &file.registry, "registry")?,
        hofstede: required(args.hofstede.clone(), &file.hofstede, "hofstede")?,
        migrants: required(args.migrants.clone(), &file.migrants, "migrants")?,
        population: required(args.population.clone(), &file.population, "population")?,
        wgi: required(args.wgi.clone(), &file.wgi, "wgi")?,
    })
}

fn k_neighbors(flag: Option<usize>, file: &FileConfig) -> Result<usize, Failure> {
    let k = flag.or(file.k_neighbors).unwrap_or(culdiv_core::DEFAULT_NEIGHBORS);
    if k == 0 {
        return Err(input_error("--k-neighbors must be positive"));
    }
    Ok(k)
}

fn parse<T: std::str::FromStr<Err = Error>>(flag: Option<String>, fallback: &Option<String>, default: T) -> Result<T, Failure> {
    match flag.or_else(|| fallback.clone()) {
        Some(s) => Ok(s.parse()?),
        None => Ok(default),
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn indicators(args: IndicatorsArgs, file: &FileConfig) -> Result<u8, Failure> {
    let paths = input_paths(&args.inputs, file)?;
    let out = required(args.inputs.out.clone(), &file.out, "out")?;
    let k = k_neighbors(args.inputs.k_neighbors, file)?;
    let run = pipeline::run_indicators(&paths, k, &out)?;
    print_warnings(&run.warnings);
    let grid = &run.derived.grid;
    eprintln!(
        "{} countries x {} years, {} excluded",
        grid.countries.len(),
        grid.years.len(),
        grid.exclusions.len()
    );
    print_files(&run.files);
    Ok(0)
}

fn fit(args: FitArgs, file: &FileConfig) -> Result<u8, Failure> {
    let paths = input_paths(&args.inputs, file)?;
    let out = required(args.inputs.out.clone(), &file.out, "out")?;
    let k = k_neighbors(args.inputs.k_neighbors, file)?;
    let compare = args.compare || file.compare.unwrap_or(false);
    let specs: Vec<ModelSpec> = if compare {
        RegressorSet::ALL
            .into_iter()
            .flat_map(|r| ErrorStructure::ALL.map(|e| ModelSpec::new(r, e)))
            .collect()
    } else {
        vec![ModelSpec::new(
            parse(args.regressors, &file.regressors, RegressorSet::LevelAndDiversity)?,
            parse(args.error_structure, &file.error_structure, ErrorStructure::All)?,
        )]
    };
    let mut opts = FitOptions::default();
    if let Some(n) = args.max_iter.or(file.max_iter) {
        opts.optim.max_iter = n;
    }
    let indicators = args.indicators.or_else(|| file.indicators.clone());
    let run = pipeline::run_fit(&paths, k, &specs, indicators.as_deref(), &out, &opts)?;
    print_warnings(&run.warnings);
    for r in &run.results {
        eprintln!(
            "{:<16} {:<12} loglik {:>14.4}  n_obs {}  {}",
            r.spec.regressors.cli_name(),
            r.spec.errors.cli_name(),
            r.loglik,
            r.n_obs,
            r.convergence.as_str()
        );
    }
    print_files(&run.files);
    if run.all_converged() {
        Ok(0)
    } else {
        let bad = run.results.iter().filter(|r| r.convergence != Convergence::Converged).count();
        eprintln!("warning: {bad} fit(s) did not converge cleanly");
        Ok(EXIT_NO_CONVERGENCE)
    }
}

fn simulate(args: SimulateArgs, file: &FileConfig) -> Result<u8, Failure> {
    let out = required(args.out, &file.out, "out")?;
    let mut world = WorldConfig::default();
    let m = world.lambda.len();
    if let Some(n) = args.countries.or(file.countries) {
        world.n_countries = n;
    }
    if let Some(t) = args.periods.or(file.periods) {
        world.n_periods = t;
    }
    if let Some(l) = args.lambda.or(file.lambda) {
        world.lambda = vec![l; m];
    }
    if let Some(p) = args.phi.or(file.phi) {
        world.phi = vec![p; m];
    }
    if let Some(s) = args.seed.or(file.seed) {
        world.seed = s;
    }
    world.k_neighbors = k_neighbors(args.k_neighbors, file)?;
    world.regressors = parse(args.regressors, &file.regressors, world.regressors)?;
    world.validate()?;

    let recovery = if args.recover || file.recover.unwrap_or(false) {
        let equations = args.equations.or(file.equations).unwrap_or(2);
        let replications = args.replications.or(file.replications).unwrap_or(20);
        if replications == 0 {
            return Err(input_error("--replications must be positive"));
        }
        let cfg = SimulationConfig::new(
            world.n_countries,
            world.n_periods,
            vec![world.lambda[0]; equations],
            vec![world.phi[0]; equations],
            world.seed,
        );
        cfg.validate()?;
        Some(RecoverySettings { config: cfg, replications })
    } else {
        None
    };

    let run = pipeline::run_simulate(&world, &out, recovery.as_ref(), &FitOptions::default())?;
    let f = &run.files;
    print_files(&[
        f.registry.clone(),
        f.hofstede.clone(),
        f.migrants.clone(),
        f.population.clone(),
        f.wgi.clone(),
        f.truth.clone(),
    ]);
    print_files(&run.recovery_files);
    if let Some(rep) = &run.recovery {
        for c in &rep.coverage {
            eprintln!(
                "{:<6} {:<10} covered {}/{}  mean |error| {:.4}",
                c.equation, c.parameter, c.covered, c.replications, c.mean_abs_error
            );
        }
        if rep.converged < rep.replications {
            eprintln!("warning: {} of {} recovery fits did not converge", rep.replications - rep.converged, rep.replications);
            return Ok(EXIT_NO_CONVERGENCE);
        }
    }
    Ok(0)
}

