//! Synthetic data from the panel error model, for validating the estimator
//! and exercising the whole pipeline.
//!
//! All randomness comes from one ChaCha8 stream seeded with
//! `SeedableRng::seed_from_u64(seed)`. For [`simulate_panel`] draws happen in
//! a fixed order: random weight matrices (period, then row), regressors
//! (period, country, column), then innovations (period, country, equation).
//! Regressors other than the intercept are uniform on [0, 1].

use std::path::{Path, PathBuf};

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, Dyn};
use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    assemble_design, fit, DesignMatrices, ErrorParams, ErrorStructure, FitOptions, ModelSpec,
    RegressorSet,
};
use crate::indicators::SpatialWeights;
use crate::ingest::{
    Country, CountryPanel, CountryRegistry, HofstedeTable, MigrantStockTensor, HOFSTEDE_HEADER,
    MIGRANTS_HEADER, POPULATION_HEADER, REGISTRY_HEADER, UNKNOWN_ORIGIN, WGI_HEADER,
};
use crate::report::{fmt_sig, serialize_matrix, write_csv, write_json};
use crate::types::{CountryCode, Governance};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// Each row gets `neighbors` positive entries in random columns, scaled
    /// to sum to `row_sum`. Drawn afresh for every period.
    RandomSubstochastic { row_sum: f64, neighbors: usize },
    /// Fixed matrices over `n_countries` and `n_periods`.
    Given(SpatialWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_countries: usize,
    pub n_periods: usize,
    pub n_equations: usize,
    /// Including the intercept.
    pub n_regressors: usize,
    /// n_regressors × n_equations.
    pub theta: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub weights: WeightScheme,
    pub seed: u64,
}

impl SimulationConfig {
    /// Three regressors, unit innovation variances with correlation 0.5,
    /// and random weights with row sum 0.9 over five neighbours.
    pub fn new(n_countries: usize, n_periods: usize, lambda: Vec<f64>, phi: Vec<f64>, seed: u64) -> Self {
        let m = lambda.len();
        let p = 3;
        let theta = DMatrix::from_fn(p, m, |k, j| {
            if k == 0 {
                0.5
            } else {
                let sign = if (k + j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (1.0 + 0.5 * k as f64)
            }
        });
        let sigma = DMatrix::from_fn(m, m, |a, b| if a == b { 1.0 } else { 0.5 });
        SimulationConfig {
            n_countries,
            n_periods,
            n_equations: m,
            n_regressors: p,
            theta,
            lambda,
            phi,
            sigma,
            weights: WeightScheme::RandomSubstochastic {
                row_sum: 0.9,
                neighbors: 5,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t, m, p) = (self.n_countries, self.n_periods, self.n_equations, self.n_regressors);
        if n == 0 || t == 0 || m == 0 || p == 0 {
            return Err(Error::Config("simulation dimensions must be positive".into()));
        }
        if n > 17576 {
            return Err(Error::Config("at most 17576 countries can be simulated".into()));
        }
        if self.theta.shape() != (p, m) {
            return Err(Error::Config(format!("theta must be {p}x{m}")));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("theta must be finite".into()));
        }
        ErrorParams {
            lambda: self.lambda.clone(),
            phi: self.phi.clone(),
            sigma: self.sigma.clone(),
        }
        .validate(m)
        .map_err(|e| Error::Config(e.to_string()))?;
        match &self.weights {
            WeightScheme::RandomSubstochastic { row_sum, neighbors } => {
                if !(0.0..=1.0).contains(row_sum) {
                    return Err(Error::Config(format!("weight row sum {row_sum} outside [0, 1]")));
                }
                if n > 1 && (*neighbors == 0 || *neighbors >= n) {
                    return Err(Error::Config(format!(
                        "neighbours per row must lie in 1..{n}, got {neighbors}"
                    )));
                }
            }
            WeightScheme::Given(w) => {
                if w.countries.len() != n || w.years.len() != t {
                    return Err(Error::Config(format!(
                        "given weights must cover {n} countries and {t} periods"
                    )));
                }
                w.validate()?;
            }
        }
        Ok(())
    }
}

/// A simulated dataset and the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub design: DesignMatrices,
    pub weights: SpatialWeights,
    pub theta: DMatrix<f64>,
    pub errors: ErrorParams,
    /// n × M composite errors, rows as in the design.
    pub u: DMatrix<f64>,
}

fn draw_weights(cfg: &SimulationConfig, rng: &mut ChaCha8Rng) -> SpatialWeights {
    let n = cfg.n_countries;
    let countries: Vec<CountryCode> = (0..n).map(|i| CountryCode::nth(i).expect("validated")).collect();
    let years: Vec<i32> = (1..=cfg.n_periods as i32).collect();
    let matrices = match &cfg.weights {
        WeightScheme::Given(w) => w.matrices.clone(),
        WeightScheme::RandomSubstochastic { row_sum, neighbors } => (0..cfg.n_periods)
            .map(|_| {
                let mut w = DMatrix::zeros(n, n);
                if n > 1 {
                    for i in 0..n {
                        let picks = index::sample(rng, n - 1, *neighbors);
                        let raw: Vec<(usize, f64)> = picks
                            .iter()
                            .map(|c| (if c >= i { c + 1 } else { c }, rng.random_range(0.1..1.0)))
                            .collect();
                        let total: f64 = raw.iter().map(|r| r.1).sum();
                        for (c, v) in raw {
                            w[(i, c)] = v / total * row_sum;
                        }
                    }
                }
                w
            })
            .collect(),
    };
    SpatialWeights {
        countries,
        years,
        matrices,
    }
}

/// Solves u_t = (I − λ_j W_t)⁻¹ (φ_j u_{t−1} + e_t) equation by equation.
struct Propagator {
    lus: Vec<Vec<LU<f64, Dyn, Dyn>>>,
    phi: Vec<f64>,
}

impl Propagator {
    fn new(matrices: &[DMatrix<f64>], lambda: &[f64], phi: &[f64]) -> Self {
        let lus = matrices
            .iter()
            .map(|w| {
                lambda
                    .iter()
                    .map(|&l| (DMatrix::identity(w.nrows(), w.ncols()) - w * l).lu())
                    .collect()
            })
            .collect();
        Propagator {
            lus,
            phi: phi.to_vec(),
        }
    }

    /// `e[t]` is N × M; returns u in the same layout.
    fn apply(&self, e: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(e.len());
        for (t, et) in e.iter().enumerate() {
            let mut ut = DMatrix::zeros(et.nrows(), et.ncols());
            for j in 0..et.ncols() {
                let mut rhs = et.column(j).into_owned();
                if t > 0 {
                    rhs += out[t - 1].column(j) * self.phi[j];
                }
                let sol = self.lus[t][j].solve(&rhs).expect("row sums ≤ 1 and |λ| < 1");
                ut.set_column(j, &sol);
            }
            out.push(ut);
        }
        out
    }
}

fn draw_innovations(n: usize, periods: usize, chol: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let m = chol.nrows();
    (0..periods)
        .map(|_| {
            let mut e = DMatrix::zeros(n, m);
            for i in 0..n {
                let z = nalgebra::DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
                e.row_mut(i).copy_from(&(chol * z).transpose());
            }
            e
        })
        .collect()
}

/// Draws a balanced panel from the model with the configured parameters.
pub fn simulate_panel(cfg: &SimulationConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let (n, periods, m, p) = (cfg.n_countries, cfg.n_periods, cfg.n_equations, cfg.n_regressors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = draw_weights(cfg, &mut rng);

    let rows = n * periods;
    let mut x = DMatrix::zeros(rows, p);
    for r in 0..rows {
        x[(r, 0)] = 1.0;
        for k in 1..p {
            x[(r, k)] = rng.random::<f64>();
        }
    }
    let chol = cfg.sigma.clone().cholesky().expect("validated").l();
    let e = draw_innovations(n, periods, &chol, &mut rng);
    let u_t = Propagator::new(&weights.matrices, &cfg.lambda, &cfg.phi).apply(&e);
    let mut u = DMatrix::zeros(rows, m);
    for (t, ut) in u_t.iter().enumerate() {
        u.rows_mut(t * n, n).copy_from(ut);
    }
    let y = &x * &cfg.theta + &u;

    let obs = (0..periods).flat_map(|t| (0..n).map(move |i| (i, t))).collect();
    let mut regressors = vec!["const".to_string()];
    regressors.extend((1..p).map(|k| format!("x{k}")));
    let design = DesignMatrices::new(
        weights.countries.clone(),
        weights.years.clone(),
        (1..=m).map(|j| format!("y{j}")).collect(),
        regressors,
        obs,
        y,
        x,
    )?;
    Ok(SimulatedPanel {
        design,
        weights,
        theta: cfg.theta.clone(),
        errors: ErrorParams {
            lambda: cfg.lambda.clone(),
            phi: cfg.phi.clone(),
            sigma: cfg.sigma.clone(),
        },
        u,
    })
}

/// Largest deviation between the Monte-Carlo covariance of the stacked
/// composite errors and the covariance implied by the innovation map,
/// measured on the correlation scale: |Ŝ_ab − C_ab| / sqrt(C_aa C_bb).
///
/// Only for small panels (N·T·M ≤ 12); weights are drawn as in
/// [`simulate_panel`] and the draws follow from the same seed.
pub fn empirical_covariance_check(cfg: &SimulationConfig, n_draws: usize) -> Result<f64> {
    cfg.validate()?;
    let (n, periods, m) = (cfg.n_countries, cfg.n_periods, cfg.n_equations);
    let dim = n * periods * m;
    if dim > 12 {
        return Err(Error::Config(format!("N·T·M = {dim} exceeds 12")));
    }
    if n_draws < 2 {
        return Err(Error::Config("at least two draws are needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = draw_weights(cfg, &mut rng);
    let prop = Propagator::new(&weights.matrices, &cfg.lambda, &cfg.phi);
    let stack = |u: &[DMatrix<f64>]| -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_fn(dim, |a, _| {
            let (cell, j) = (a / m, a % m);
            u[cell / n][(cell % n, j)]
        })
    };

    // Dense map from stacked innovations to stacked errors.
    let mut g = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        let (cell, j) = (a / m, a % m);
        let mut e = vec![DMatrix::zeros(n, m); periods];
        e[cell / n][(cell % n, j)] = 1.0;
        g.set_column(a, &stack(&prop.apply(&e)));
    }
    let mut cov_e = DMatrix::zeros(dim, dim);
    for cell in 0..n * periods {
        cov_e
            .view_mut((cell * m, cell * m), (m, m))
            .copy_from(&cfg.sigma);
    }
    let dense = &g * cov_e * g.transpose();

    let chol = cfg.sigma.clone().cholesky().expect("validated").l();
    let mut acc = DMatrix::zeros(dim, dim);
    for _ in 0..n_draws {
        let e = draw_innovations(n, periods, &chol, &mut rng);
        let u = stack(&prop.apply(&e));
        acc.ger(1.0, &u, &u, 1.0);
    }
    let sample = acc / n_draws as f64;

    let mut worst: f64 = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let scale = (dense[(a, a)] * dense[(b, b)]).sqrt();
            if scale > 0.0 {
                worst = worst.max((sample[(a, b)] - dense[(a, b)]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// One estimated parameter of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRecord {
    pub replication: usize,
    pub seed: u64,
    pub equation: String,
    pub parameter: String,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub within_3se: bool,
}

/// Per-parameter summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub equation: String,
    pub parameter: String,
    pub replications: usize,
    pub covered: usize,
    pub mean_abs_error: f64,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub records: Vec<RecoveryRecord>,
    pub coverage: Vec<Coverage>,
    pub converged: usize,
    pub replications: usize,
}

impl RecoveryReport {
    /// Replications in which every parameter lies within three standard
    /// errors of its estimate.
    pub fn fully_covered(&self) -> usize {
        (0..self.replications)
            .filter(|&r| self.records.iter().filter(|x| x.replication == r).all(|x| x.within_3se))
            .count()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let rec = dir.join("recovery.csv");
        write_csv(
            &rec,
            &["replication", "seed", "equation", "parameter", "truth", "estimate", "std_error", "delta", "within_3se"],
            self.records.iter().map(|r| {
                vec![
                    r.replication.to_string(),
                    r.seed.to_string(),
                    r.equation.clone(),
                    r.parameter.clone(),
                    fmt_sig(r.truth),
                    fmt_sig(r.estimate),
                    fmt_sig(r.std_error),
                    fmt_sig(r.estimate - r.truth),
                    r.within_3se.to_string(),
                ]
            }),
        )?;
        let cov = dir.join("coverage.csv");
        write_csv(
            &cov,
            &["equation", "parameter", "replications", "covered", "coverage", "mean_abs_error", "mean_error"],
            self.coverage.iter().map(|c| {
                vec![
                    c.equation.clone(),
                    c.parameter.clone(),
                    c.replications.to_string(),
                    c.covered.to_string(),
                    fmt_sig(c.covered as f64 / c.replications as f64),
                    fmt_sig(c.mean_abs_error),
                    fmt_sig(c.mean_error),
                ]
            }),
        )?;
        Ok(vec![rec, cov])
    }
}

/// Fits the full model to `replications` independent panels (seed `cfg.seed
/// + r` for replication `r`) and compares θ̂, λ̂ and φ̂ with the truth.
pub fn recovery_study(cfg: &SimulationConfig, replications: usize, opts: &FitOptions) -> Result<RecoveryReport> {
    cfg.validate()?;
    if replications == 0 {
        return Err(Error::Config("at least one replication is needed".into()));
    }
    let spec = ModelSpec::new(RegressorSet::LevelOnly, ErrorStructure::All);
    let mut records = Vec::new();
    let mut converged = 0;
    for r in 0..replications {
        let seed = cfg.seed.wrapping_add(r as u64);
        let sim = simulate_panel(&SimulationConfig { seed, ..cfg.clone() })?;
        let result = fit(&sim.design, &sim.weights, spec, opts)?;
        if result.convergence == crate::estimator::Convergence::Converged {
            converged += 1;
        }
        let mut push = |equation: &str, parameter: &str, truth: f64| {
            if let Some(c) = result.coefficient(equation, parameter) {
                records.push(RecoveryRecord {
                    replication: r,
                    seed,
                    equation: equation.to_string(),
                    parameter: parameter.to_string(),
                    truth,
                    estimate: c.estimate,
                    std_error: c.std_error,
                    within_3se: (c.estimate - truth).abs() <= 3.0 * c.std_error,
                });
            }
        };
        for (j, eq) in sim.design.equations.iter().enumerate() {
            for (k, reg) in sim.design.regressors.iter().enumerate() {
                push(eq, reg, cfg.theta[(k, j)]);
            }
            push(eq, "lambda", cfg.lambda[j]);
            push(eq, "phi", cfg.phi[j]);
        }
    }

    let mut coverage: Vec<Coverage> = Vec::new();
    for rec in &records {
        if coverage.iter().any(|c| c.equation == rec.equation && c.parameter == rec.parameter) {
            continue;
        }
        let same: Vec<&RecoveryRecord> = records
            .iter()
            .filter(|x| x.equation == rec.equation && x.parameter == rec.parameter)
            .collect();
        let k = same.len() as f64;
        coverage.push(Coverage {
            equation: rec.equation.clone(),
            parameter: rec.parameter.clone(),
            replications: same.len(),
            covered: same.iter().filter(|x| x.within_3se).count(),
            mean_abs_error: same.iter().map(|x| (x.estimate - x.truth).abs()).sum::<f64>() / k,
            mean_error: same.iter().map(|x| x.estimate - x.truth).sum::<f64>() / k,
        });
    }
    Ok(RecoveryReport {
        records,
        coverage,
        converged,
        replications,
    })
}

/// Settings for a synthetic world in the input file formats.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    /// Countries with complete data; all end up in the observation grid.
    pub n_countries: usize,
    /// Countries that only appear as migrant origins, without Hofstede
    /// scores or panel data. Their scores are imputed.
    pub n_origin_only: usize,
    pub n_periods: usize,
    pub first_year: i32,
    pub year_step: i32,
    pub origins_per_country: usize,
    pub k_neighbors: usize,
    pub regressors: RegressorSet,
    /// One per governance equation.
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let m = Governance::COUNT;
        WorldConfig {
            n_countries: 40,
            n_origin_only: 6,
            n_periods: 5,
            first_year: 2000,
            year_step: 5,
            origins_per_country: 8,
            k_neighbors: crate::impute::DEFAULT_NEIGHBORS,
            regressors: RegressorSet::LevelAndDiversity,
            lambda: vec![0.15; m],
            phi: vec![0.8; m],
            sigma: DMatrix::from_fn(m, m, |a, b| if a == b { 0.04 } else { 0.02 }),
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let m = Governance::COUNT;
        if self.n_countries < self.k_neighbors.max(2) {
            return Err(Error::Config(format!(
                "at least {} countries with full data are needed",
                self.k_neighbors.max(2)
            )));
        }
        if self.n_countries + self.n_origin_only > 400 {
            return Err(Error::Config("at most 400 synthetic countries are supported".into()));
        }
        if self.n_periods == 0 || self.year_step <= 0 {
            return Err(Error::Config("periods and year step must be positive".into()));
        }
        let total = self.n_countries + self.n_origin_only;
        if self.origins_per_country == 0 || self.origins_per_country >= total {
            return Err(Error::Config(format!("origins per country must lie in 1..{total}")));
        }
        ErrorParams {
            lambda: self.lambda.clone(),
            phi: self.phi.clone(),
            sigma: self.sigma.clone(),
        }
        .validate(m)
        .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parameters behind a synthetic world's governance scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldTruth {
    pub seed: u64,
    pub spec: ModelSpec,
    pub countries: Vec<CountryCode>,
    pub years: Vec<i32>,
    pub equations: Vec<String>,
    pub regressors: Vec<String>,
    /// regressors × equations.
    #[serde(serialize_with = "serialize_matrix")]
    pub theta: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub sigma: DMatrix<f64>,
}

/// A complete set of inputs generated from the model.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub registry: CountryRegistry,
    pub hofstede: HofstedeTable,
    pub migrants: MigrantStockTensor,
    pub panel: CountryPanel,
    pub truth: WorldTruth,
}

/// Paths written by [`SyntheticWorld::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFiles {
    pub registry: PathBuf,
    pub hofstede: PathBuf,
    pub migrants: PathBuf,
    pub population: PathBuf,
    pub wgi: PathBuf,
    pub truth: PathBuf,
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Generates a country universe with migrant stocks, runs it through the
/// regular pipeline and draws governance scores from the full error model.
///
/// Raw inputs are integers; governance scores are
/// rounded to 6 significant digits, so the files reproduce the in-memory
/// world exactly.
pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.n_countries + cfg.n_origin_only;
    let codes: Vec<CountryCode> = (0..total)
        .map(|i| CountryCode::nth(i * 43 + 17).expect("validated count"))
        .collect();
    let years: Vec<i32> = (0..cfg.n_periods as i32)
        .map(|t| cfg.first_year + t * cfg.year_step)
        .collect();

    let registry = CountryRegistry::new(
        codes
            .iter()
            .enumerate()
            .map(|(i, &code)| Country {
                code,
                name: format!("Country {}", i + 1),
                centroid: Some((
                    round_to(rng.random_range(-55.0..70.0), 4),
                    round_to(rng.random_range(-180.0..180.0), 4),
                )),
            })
            .collect(),
    )?;

    let mut hofstede = HofstedeTable::default();
    for &code in &codes[..cfg.n_countries] {
        let row = std::array::from_fn(|_| Some(rng.random_range(5..=100) as f64));
        hofstede.scores.insert(code, row);
    }

    let mut panel = CountryPanel::default();
    let mut migrants = MigrantStockTensor {
        years: years.clone(),
        ..Default::default()
    };
    for (d, &dest) in codes[..cfg.n_countries].iter().enumerate() {
        let base: f64 = rng.random_range(1e6f64.ln()..2e8f64.ln()).exp();
        let growth: f64 = rng.random_range(0.0..0.02);
        let share = rng.random_range(0.02..0.25);
        let picks = index::sample(&mut rng, total - 1, cfg.origins_per_country);
        let origins: Vec<(CountryCode, f64)> = picks
            .iter()
            .map(|c| (codes[if c >= d { c + 1 } else { c }], rng.random_range(0.2..1.0)))
            .collect();
        let weight_total: f64 = origins.iter().map(|o| o.1).sum();
        for (t, &year) in years.iter().enumerate() {
            let pop = (base * (1.0 + growth).powi(t as i32 * cfg.year_step)).round();
            panel.population.insert((dest, year), pop);
            panel.wgi.insert((dest, year), [Some(0.0); 6]);
            let foreign_target = pop * share * (1.0 + 0.04 * t as f64);
            let mut foreign = 0.0;
            for &(origin, w) in &origins {
                let c = (foreign_target * w / weight_total * rng.random_range(0.9..1.1)).round();
                if c > 0.0 {
                    migrants.counts.insert((dest, year, origin), c);
                    foreign += c;
                }
            }
            let unknown = if d % 3 == 0 { (0.02 * foreign).round() } else { 0.0 };
            if unknown > 0.0 {
                migrants.unknown_origin.insert((dest, year), unknown);
            }
            // Some destinations leave the native count implicit.
            if d % 4 != 1 {
                migrants.counts.insert((dest, year, dest), pop - foreign - unknown);
            }
        }
    }

    let derived = crate::pipeline::derive(&registry, &hofstede, &migrants, &panel, cfg.k_neighbors)?;
    let spec = ModelSpec::new(cfg.regressors, ErrorStructure::All);
    let design = assemble_design(&derived.indicators, &panel, &derived.imputed, spec, &derived.grid)?;
    let (n, m, p) = (derived.grid.countries.len(), design.n_equations(), design.n_regressors());
    if design.n_obs() != n * years.len() {
        return Err(Error::Domain("synthetic world lost observations".into()));
    }

    let theta = DMatrix::from_fn(p, m, |k, _| {
        if k == 0 {
            rng.random_range(-1.0..1.0)
        } else {
            rng.random_range(-1.5..1.5)
        }
    });
    let chol = cfg.sigma.clone().cholesky().expect("validated").l();
    let e = draw_innovations(n, years.len(), &chol, &mut rng);
    let u = Propagator::new(&derived.weights.matrices, &cfg.lambda, &cfg.phi).apply(&e);
    let fitted = &design.x * &theta;
    for (r, &(i, t)) in design.obs.iter().enumerate() {
        let key = (derived.grid.countries[i], years[t]);
        let row = std::array::from_fn(|j| {
            let v: f64 = fmt_sig(fitted[(r, j)] + u[t][(i, j)]).parse().expect("finite");
            Some(v)
        });
        panel.wgi.insert(key, row);
    }

    let truth = WorldTruth {
        seed: cfg.seed,
        spec,
        countries: derived.grid.countries.clone(),
        years,
        equations: design.equations.clone(),
        regressors: design.regressors.clone(),
        theta,
        lambda: cfg.lambda.clone(),
        phi: cfg.phi.clone(),
        sigma: cfg.sigma.clone(),
    };
    Ok(SyntheticWorld {
        registry,
        hofstede,
        migrants,
        panel,
        truth,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SyntheticWorld {
    /// Writes the five input files and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<WorldFiles> {
        crate::report::ensure_dir(dir)?;
        let files = WorldFiles {
            registry: dir.join("registry.csv"),
            hofstede: dir.join("hofstede.csv"),
            migrants: dir.join("migrants.csv"),
            population: dir.join("population.csv"),
            wgi: dir.join("wgi.csv"),
            truth: dir.join("truth.json"),
        };
        write_csv(
            &files.registry,
            &REGISTRY_HEADER,
            self.registry.entries().iter().map(|c| {
                let (lat, lon) = c.centroid.map_or((None, None), |(a, b)| (Some(a), Some(b)));
                vec![c.code.to_string(), c.name.clone(), cell(lat), cell(lon)]
            }),
        )?;
        write_csv(
            &files.hofstede,
            &HOFSTEDE_HEADER,
            self.hofstede.scores.iter().map(|(code, row)| {
                let mut r = vec![code.to_string()];
                r.extend(row.iter().map(|v| cell(*v)));
                r
            }),
        )?;
        let mut rows: Vec<Vec<String>> = self
            .migrants
            .counts
            .iter()
            .map(|(&(d, y, o), &c)| vec![d.to_string(), y.to_string(), o.to_string(), c.to_string()])
            .collect();
        rows.extend(
            self.migrants
                .unknown_origin
                .iter()
                .map(|(&(d, y), &c)| vec![d.to_string(), y.to_string(), UNKNOWN_ORIGIN.to_string(), c.to_string()]),
        );
        write_csv(&files.migrants, &MIGRANTS_HEADER, rows)?;
        write_csv(
            &files.population,
            &POPULATION_HEADER,
            self.panel
                .population
                .iter()
                .map(|(&(c, y), &p)| vec![c.to_string(), y.to_string(), p.to_string()]),
        )?;
        write_csv(
            &files.wgi,
            &WGI_HEADER,
            self.panel.wgi.iter().map(|(&(c, y), row)| {
                let mut r = vec![c.to_string(), y.to_string()];
                r.extend(row.iter().map(|v| cell(*v)));
                r
            }),
        )?;
        write_json(&files.truth, &self.truth)?;
        Ok(files)
    }
}
