//! End-to-end runs behind the command-line subcommands: load the inputs,
//! derive indicators and weights, then fit and export.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimator::{
    assemble_design, fit, fit_statistics, Convergence, DesignMatrices, FitOptions, FitResult, ModelSpec,
    RegressorSet,
};
use crate::impute::{impute_hofstede, redistribute_unknown, ImputedHofstedeTable};
use crate::indicators::{build_weights, compute_indicators, IndicatorPanel, SpatialWeights};
use crate::ingest::{
    build_observation_grid, load_hofstede, load_migrant_stock, load_panel, CountryPanel, CountryRegistry,
    HofstedeTable, LoadReport, MigrantStockTensor, ObservationGrid,
};
use crate::report;
use crate::simulate::{generate_world, recovery_study, RecoveryReport, SimulationConfig, WorldConfig, WorldFiles};
use crate::types::{CountryCode, Dimension};

type DimRow = [Option<f64>; 6];

/// The five input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputPaths {
    pub registry: PathBuf,
    pub hofstede: PathBuf,
    pub migrants: PathBuf,
    pub population: PathBuf,
    pub wgi: PathBuf,
}

impl From<&WorldFiles> for InputPaths {
    fn from(f: &WorldFiles) -> Self {
        InputPaths {
            registry: f.registry.clone(),
            hofstede: f.hofstede.clone(),
            migrants: f.migrants.clone(),
            population: f.population.clone(),
            wgi: f.wgi.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub registry: CountryRegistry,
    pub hofstede: HofstedeTable,
    pub migrants: MigrantStockTensor,
    pub panel: CountryPanel,
    pub reports: Vec<LoadReport>,
}

pub fn load_inputs(paths: &InputPaths) -> Result<Inputs> {
    let registry = CountryRegistry::load(&paths.registry)?;
    let hofstede = load_hofstede(&paths.hofstede, &registry)?;
    let migrants = load_migrant_stock(&paths.migrants, &registry)?;
    let panel = load_panel(&paths.population, &paths.wgi, &registry)?;
    let mut reports = hofstede.reports;
    reports.extend(migrants.reports);
    reports.extend(panel.reports);
    Ok(Inputs {
        registry,
        hofstede: hofstede.value,
        migrants: migrants.value,
        panel: panel.value,
        reports,
    })
}

/// Everything computed from the raw inputs before estimation.
#[derive(Debug, Clone)]
pub struct Derived {
    pub imputed: ImputedHofstedeTable,
    /// Migrant stock with unknown origins redistributed.
    pub migrants: MigrantStockTensor,
    pub grid: ObservationGrid,
    pub indicators: IndicatorPanel,
    pub weights: SpatialWeights,
}

/// Imputes scores, redistributes unknown origins, builds the observation
/// grid, and computes indicators and weights over it.
pub fn derive(
    registry: &CountryRegistry,
    hofstede: &HofstedeTable,
    migrants: &MigrantStockTensor,
    panel: &CountryPanel,
    k_neighbors: usize,
) -> Result<Derived> {
    let imputed = impute_hofstede(hofstede, registry, k_neighbors)?;
    let migrants = redistribute_unknown(migrants)?;
    let grid = build_observation_grid(&migrants, panel, hofstede)?;
    let indicators = compute_indicators(&migrants, &imputed, panel, &grid)?;
    let weights = build_weights(&migrants, panel, &grid)?;
    weights.validate()?;
    Ok(Derived {
        imputed,
        migrants,
        grid,
        indicators,
        weights,
    })
}

/// Rows of the exclusion report: skipped input rows, countries left out of
/// the grid, and (country, year) cells dropped from the design.
pub fn exclusion_rows(reports: &[LoadReport], grid: &ObservationGrid, designs: &[&DesignMatrices]) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    for r in reports {
        for s in &r.skipped {
            rows.push((s.code.clone(), format!("{} line {}: {}", r.file, s.line, s.reason)));
        }
    }
    rows.extend(grid.exclusions.iter().map(|e| (e.code.clone(), e.reason.clone())));
    let mut seen = std::collections::BTreeSet::new();
    for d in designs {
        for o in &d.dropped {
            if seen.insert((o.code.clone(), o.year)) {
                rows.push((o.code.clone(), format!("{}: {}", o.year, o.reason)));
            }
        }
    }
    rows
}

/// Files written by `run_indicators`.
#[derive(Debug, Clone)]
pub struct IndicatorsRun {
    pub derived: Derived,
    pub files: Vec<PathBuf>,
    /// Non-fatal loader findings, prefixed with the file name.
    pub warnings: Vec<String>,
}

fn load_warnings(reports: &[LoadReport]) -> Vec<String> {
    reports
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("{}: {w}", r.file)))
        .collect()
}

/// Writes `indicators.csv`, `indicators_avg.csv`, `weights_<year>.csv`,
/// `imputation.csv` and `exclusions.csv` into `out`.
pub fn run_indicators(paths: &InputPaths, k_neighbors: usize, out: &Path) -> Result<IndicatorsRun> {
    let inputs = load_inputs(paths)?;
    let derived = derive(&inputs.registry, &inputs.hofstede, &inputs.migrants, &inputs.panel, k_neighbors)?;
    report::ensure_dir(out)?;
    let mut files = vec![
        out.join("indicators.csv"),
        out.join("indicators_avg.csv"),
        out.join("imputation.csv"),
        out.join("exclusions.csv"),
    ];
    report::write_indicators(&files[0], &derived.indicators)?;
    report::write_indicator_averages(&files[1], &derived.indicators)?;
    report::write_imputation(&files[2], &derived.imputed)?;
    report::write_exclusions(&files[3], &exclusion_rows(&inputs.reports, &derived.grid, &[]))?;
    files.extend(report::write_weights(out, &derived.weights)?);
    Ok(IndicatorsRun {
        derived,
        files,
        warnings: load_warnings(&inputs.reports),
    })
}

/// Reads an `indicators.csv` export back over the grid. A missing `cdi`
/// cell anywhere means the panel carries levels only.
pub fn read_indicators(path: &Path, grid: &ObservationGrid) -> Result<IndicatorPanel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = ["code", "year", "dimension", "cli", "cdi"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut cells: BTreeMap<(CountryCode, i32), (DimRow, DimRow)> = BTreeMap::new();
    let mut first_lines: BTreeMap<(CountryCode, i32, usize), u64> = BTreeMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let invalid = |message: String| Error::InvalidRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let code: CountryCode = rec[0].parse().map_err(|_| invalid(format!("invalid code `{}`", &rec[0])))?;
        let year: i32 = rec[1].parse().map_err(|_| invalid(format!("invalid year `{}`", &rec[1])))?;
        let dim = Dimension::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(&rec[2]))
            .ok_or_else(|| invalid(format!("unknown dimension `{}`", &rec[2])))?;
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                s.trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| invalid(format!("invalid number `{s}`")))
            }
        };
        let cli = parse(&rec[3])?.ok_or_else(|| invalid("empty cli".into()))?;
        let cdi = parse(&rec[4])?;
        if let Some(&first_line) = first_lines.get(&(code, year, dim.index())) {
            return Err(Error::DuplicateRow {
                path: path.to_path_buf(),
                key: format!("{code},{year},{dim}"),
                first_line,
                line,
            });
        }
        first_lines.insert((code, year, dim.index()), line);
        let entry = cells.entry((code, year)).or_default();
        entry.0[dim.index()] = Some(cli);
        entry.1[dim.index()] = cdi;
    }
    let mut cli = Vec::new();
    let mut cdi = Vec::new();
    let mut has_cdi = true;
    for &code in &grid.countries {
        for &year in &grid.years {
            let (l, d) = cells.get(&(code, year)).ok_or_else(|| {
                Error::Config(format!("{} has no indicators for {code} in {year}", path.display()))
            })?;
            let mut lrow = [0.0; 6];
            let mut drow = [0.0; 6];
            for k in 0..6 {
                lrow[k] = l[k].ok_or_else(|| {
                    Error::Config(format!("{} lacks {} for {code} in {year}", path.display(), Dimension::ALL[k]))
                })?;
                match d[k] {
                    Some(v) => drow[k] = v,
                    None => has_cdi = false,
                }
            }
            cli.push(lrow);
            cdi.push(drow);
        }
    }
    IndicatorPanel::from_parts(
        grid.countries.clone(),
        grid.years.clone(),
        cli,
        has_cdi.then_some(cdi),
    )
}

/// Result of `run_fit`.
#[derive(Debug, Clone)]
pub struct FitRun {
    pub results: Vec<FitResult>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl FitRun {
    pub fn all_converged(&self) -> bool {
        self.results.iter().all(|r| r.convergence == Convergence::Converged)
    }
}

/// Fits each specification and writes the exports.
///
/// A single specification writes `coefficients.csv`,
/// `coefficients_table.csv`, `loglik.csv`, `r2.csv`, `residual_cov.csv`
/// and `fit.json` into `out`. Several specifications additionally write
/// `loglik_table.csv` (regressor sets by error structures) and put the
/// per-model coefficient and covariance tables into `<regressors>_<errors>/`
/// subdirectories. `exclusions.csv` is written before fitting starts.
/// Independent fits run on separate threads.
pub fn run_fit(
    paths: &InputPaths,
    k_neighbors: usize,
    specs: &[ModelSpec],
    indicators_file: Option<&Path>,
    out: &Path,
    opts: &FitOptions,
) -> Result<FitRun> {
    if specs.is_empty() {
        return Err(Error::Config("no model specification to fit".into()));
    }
    let inputs = load_inputs(paths)?;
    let mut derived = derive(&inputs.registry, &inputs.hofstede, &inputs.migrants, &inputs.panel, k_neighbors)?;
    if let Some(file) = indicators_file {
        derived.indicators = read_indicators(file, &derived.grid)?;
    }
    report::ensure_dir(out)?;

    let mut designs: BTreeMap<RegressorSet, DesignMatrices> = BTreeMap::new();
    let mut design_error = None;
    for spec in specs {
        if designs.contains_key(&spec.regressors) {
            continue;
        }
        match assemble_design(&derived.indicators, &inputs.panel, &derived.imputed, *spec, &derived.grid) {
            Ok(d) => {
                designs.insert(spec.regressors, d);
            }
            Err(e) => {
                design_error = Some(e);
                break;
            }
        }
    }
    let exclusions = out.join("exclusions.csv");
    let design_refs: Vec<&DesignMatrices> = designs.values().collect();
    report::write_exclusions(&exclusions, &exclusion_rows(&inputs.reports, &derived.grid, &design_refs))?;
    if let Some(e) = design_error {
        return Err(e);
    }

    let weights = &derived.weights;
    let outcomes: Vec<Result<FitResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| {
                let design = &designs[&spec.regressors];
                scope.spawn(move || fit(design, weights, *spec, opts).and_then(|r| fit_statistics(r, design)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("fit thread panicked".into()))))
            .collect()
    });
    let results = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut files = vec![exclusions];
    if let [only] = results.as_slice() {
        files.extend(write_model_tables(out, only)?);
        let fit_json = out.join("fit.json");
        report::write_json(&fit_json, only)?;
        files.push(fit_json);
    } else {
        for r in &results {
            let dir = out.join(format!("{}_{}", r.spec.regressors.cli_name(), r.spec.errors.cli_name()));
            report::ensure_dir(&dir)?;
            files.extend(write_model_tables(&dir, r)?);
        }
        let table = out.join("loglik_table.csv");
        report::write_loglik_table(&table, &results)?;
        let fit_json = out.join("fit.json");
        report::write_json(&fit_json, &results)?;
        files.extend([table, fit_json]);
    }
    let loglik = out.join("loglik.csv");
    let r2 = out.join("r2.csv");
    report::write_loglik(&loglik, &results)?;
    report::write_r2(&r2, &results)?;
    files.extend([loglik, r2]);
    Ok(FitRun {
        results,
        files,
        warnings: load_warnings(&inputs.reports),
    })
}

fn write_model_tables(dir: &Path, fit: &FitResult) -> Result<Vec<PathBuf>> {
    let files = vec![
        dir.join("coefficients.csv"),
        dir.join("coefficients_table.csv"),
        dir.join("residual_cov.csv"),
    ];
    report::write_coefficients(&files[0], fit)?;
    report::write_coefficient_table(&files[1], fit)?;
    report::write_residual_cov(&files[2], fit)?;
    Ok(files)
}

/// Recovery-study settings for `run_simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySettings {
    pub config: SimulationConfig,
    pub replications: usize,
}

#[derive(Debug, Clone)]
pub struct SimulateRun {
    pub files: WorldFiles,
    pub recovery: Option<RecoveryReport>,
    pub recovery_files: Vec<PathBuf>,
}

/// Writes a synthetic world in the input formats plus `truth.json`, and
/// optionally runs a recovery study writing `recovery.csv` and
/// `coverage.csv`.
pub fn run_simulate(
    world: &WorldConfig,
    out: &Path,
    recovery: Option<&RecoverySettings>,
    opts: &FitOptions,
) -> Result<SimulateRun> {
    let generated = generate_world(world)?;
    let files = generated.write(out)?;
    let (recovery, recovery_files) = match recovery {
        Some(s) => {
            let rep = recovery_study(&s.config, s.replications, opts)?;
            let written = rep.write(out)?;
            (Some(rep), written)
        }
        None => (None, Vec::new()),
    };
    Ok(SimulateRun {
        files,
        recovery,
        recovery_files,
    })
}
