//! Acceptance criteria, one pass/fail line each.
//!
//! Runs without the libtest harness so the summary is always printed.
//! Criterion 9 needs the real input files in `data/` at the workspace root
//! (or in the directory named by `CULDIV_DATA_DIR`) and is skipped otherwise.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::RngExt;

use culdiv_core::impute::great_circle_km;
use culdiv_core::ingest::ObservationGrid;
use culdiv_core::pipeline::{run_fit, run_indicators, run_simulate, InputPaths};
use culdiv_core::simulate::{generate_world, recovery_study};
use culdiv_core::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn likelihood_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let shapes = [(1, 1, 1), (2, 2, 1), (3, 2, 2), (2, 3, 2), (4, 3, 1), (3, 4, 1), (2, 2, 3), (1, 4, 3), (6, 2, 1), (3, 1, 4)];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for inst in 0..60 {
        let (n, t, m) = shapes[inst % shapes.len()];
        assert!(n * t * m <= 12);
        let p = 1 + inst % 3;
        let design = common::random_design(&mut rng, n, t, m, p);
        let weights = common::random_weights(&mut rng, n, t);
        let err = ErrorParams {
            lambda: (0..m).map(|_| rng.random_range(-0.9..0.9)).collect(),
            phi: (0..m).map(|_| rng.random_range(-0.9..0.9)).collect(),
            sigma: common::random_sigma(&mut rng, m),
        };
        let theta = DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
        let ll = log_likelihood(&theta, &err, &design, &weights).unwrap();
        let oracle = common::dense_loglik(&design, &weights, &theta, &err);
        worst = worst.max((ll - oracle).abs());
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-8 && secs < 10.0,
        format!("{count} instances, max abs error {worst:.2e}, {secs:.2} s"),
    )
}

fn ols_collapse() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut cfg = SimulationConfig::new(20 + seed as usize, 3, vec![0.3, 0.2, -0.1], vec![0.5, 0.4, 0.6], seed);
        cfg.n_regressors = 4;
        cfg.theta = DMatrix::from_fn(4, 3, |k, j| (k as f64 - j as f64) * 0.7);
        let sim = simulate_panel(&cfg).unwrap();
        let spec = ModelSpec::new(RegressorSet::LevelOnly, ErrorStructure::Independent);
        let fitted = fit(&sim.design, &sim.weights, spec, &FitOptions::default()).unwrap();
        let reference = common::ols(&sim.design);
        worst = worst.max((&fitted.theta - &reference).abs().max());
    }
    check(worst < 1e-8, format!("10 datasets, max coefficient difference {worst:.2e}"))
}

fn nesting() -> Outcome {
    let mut violations = Vec::new();
    let mut fits = 0;
    for seed in 0..10 {
        let world = generate_world(&WorldConfig {
            n_countries: 24,
            n_origin_only: 4,
            seed: 100 + seed,
            ..WorldConfig::default()
        })
        .unwrap();
        let derived = pipeline::derive(&world.registry, &world.hofstede, &world.migrants, &world.panel, 5).unwrap();
        for set in RegressorSet::ALL {
            let design = assemble_design(
                &derived.indicators,
                &world.panel,
                &derived.imputed,
                ModelSpec::new(set, ErrorStructure::All),
                &derived.grid,
            )
            .unwrap();
            let ll: BTreeMap<ErrorStructure, f64> = ErrorStructure::ALL
                .into_iter()
                .map(|e| {
                    let r = fit(
                        &design,
                        &derived.weights,
                        ModelSpec::new(set, e),
                        &FitOptions {
                            standard_errors: false,
                            ..FitOptions::default()
                        },
                    )
                    .unwrap();
                    fits += 1;
                    (e, r.loglik)
                })
                .collect();
            use ErrorStructure::*;
            let pairs = [(All, Spatial), (All, Serial), (All, Sur), (Spatial, Independent), (Serial, Independent), (Sur, Independent)];
            for (hi, lo) in pairs {
                if ll[&hi].is_nan() || ll[&hi] < ll[&lo] {
                    violations.push(format!("seed {seed} {set}: {hi} {} < {lo} {}", ll[&hi], ll[&lo]));
                }
            }
        }
    }
    check(
        violations.is_empty(),
        if violations.is_empty() {
            format!("{fits} fits over 10 datasets x 3 regressor sets, no violations")
        } else {
            violations.join("; ")
        },
    )
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let cfg = SimulationConfig::new(100, 5, vec![0.15, 0.10], vec![0.8, 0.78], 2024);
    let report = recovery_study(&cfg, 20, &FitOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let min_cov = report.coverage.iter().map(|c| c.covered).min().unwrap();
    let worst = report
        .coverage
        .iter()
        .min_by_key(|c| c.covered)
        .map(|c| format!("{} {}", c.equation, c.parameter))
        .unwrap();
    let phi_mae = report
        .coverage
        .iter()
        .filter(|c| c.parameter == "phi")
        .map(|c| c.mean_abs_error)
        .fold(0.0, f64::max);
    check(
        min_cov >= 18 && phi_mae < 0.05 && secs < 300.0,
        format!(
            "lowest coverage {min_cov}/20 ({worst}), phi MAE {phi_mae:.4}, {}/20 converged, {secs:.1} s",
            report.converged
        ),
    )
}

fn code(i: usize) -> CountryCode {
    CountryCode::nth(i).unwrap()
}

fn hand_indicators() -> (f64, f64) {
    let (i, o) = (code(0), code(1));
    let mut tensor = MigrantStockTensor {
        years: vec![2000],
        ..Default::default()
    };
    tensor.counts.insert((i, 2000, i), 8.0);
    tensor.counts.insert((i, 2000, o), 2.0);
    let mut panel = CountryPanel::default();
    panel.population.insert((i, 2000), 10.0);
    let hof = ImputedHofstedeTable {
        scores: [(i, [50.0; 6]), (o, [90.0; 6])].into_iter().collect(),
        provenance: [(i, Provenance::Observed), (o, Provenance::Observed)].into_iter().collect(),
        imputed_dims: BTreeMap::new(),
        donors: BTreeMap::new(),
    };
    let grid = ObservationGrid {
        countries: vec![i],
        years: vec![2000],
        exclusions: vec![],
    };
    let ind = compute_indicators(&tensor, &hof, &panel, &grid).unwrap();
    (
        ind.cli(i, 2000, Dimension::Pdi).unwrap(),
        ind.cdi(i, 2000, Dimension::Pdi).unwrap(),
    )
}

fn indicator_oracle() -> Outcome {
    let mut rng = common::rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_dest = rng.random_range(1..4usize);
        let n_all = n_dest + rng.random_range(1..4usize);
        let years = [2000, 2005];
        let mut tensor = MigrantStockTensor {
            years: years.to_vec(),
            ..Default::default()
        };
        let mut panel = CountryPanel::default();
        let mut hof = ImputedHofstedeTable {
            scores: BTreeMap::new(),
            provenance: BTreeMap::new(),
            imputed_dims: BTreeMap::new(),
            donors: BTreeMap::new(),
        };
        for c in 0..n_all {
            let row = std::array::from_fn(|_| rng.random_range(0.0..120.0));
            hof.scores.insert(code(c), row);
            hof.provenance.insert(code(c), Provenance::Observed);
        }
        for d in 0..n_dest {
            for &y in &years {
                let pop: u32 = rng.random_range(1..400);
                panel.population.insert((code(d), y), pop as f64);
                let mut left = pop;
                for o in (0..n_all).filter(|&o| o != d) {
                    let c = rng.random_range(0..=left / 2);
                    if c > 0 {
                        tensor.counts.insert((code(d), y, code(o)), c as f64);
                    }
                    left -= c;
                }
                if rng.random::<bool>() {
                    let native = rng.random_range(0..=left);
                    tensor.counts.insert((code(d), y, code(d)), native as f64);
                }
            }
        }
        let grid = ObservationGrid {
            countries: (0..n_dest).map(code).collect(),
            years: years.to_vec(),
            exclusions: vec![],
        };
        let ind = compute_indicators(&tensor, &hof, &panel, &grid).unwrap();
        for d in 0..n_dest {
            for &y in &years {
                let pop = panel.population[&(code(d), y)] as usize;
                // One entry per resident: foreign-born by origin, the rest native.
                let mut persons: Vec<usize> = Vec::with_capacity(pop);
                for o in (0..n_all).filter(|&o| o != d) {
                    let c = tensor.count(code(d), y, code(o)) as usize;
                    persons.extend(std::iter::repeat_n(o, c));
                }
                persons.resize(pop, d);
                for dim in Dimension::ALL {
                    let values: Vec<f64> = persons.iter().map(|&o| hof.scores[&code(o)][dim.index()]).collect();
                    let (mean, std) = common::mean_std(&values);
                    worst = worst.max((ind.cli(code(d), y, dim).unwrap() - mean).abs());
                    worst = worst.max((ind.cdi(code(d), y, dim).unwrap() - std).abs());
                }
            }
        }
    }
    let (cli, cdi) = hand_indicators();
    check(
        worst < 1e-10 && cli == 58.0 && cdi == 16.0,
        format!("100 tensors, max abs error {worst:.2e}; hand case CLI {cli}, CDI {cdi}"),
    )
}

fn imputation() -> Outcome {
    let mut rng = common::rng(6);
    let mut failures = Vec::new();
    for case in 0..100 {
        let n = rng.random_range(8..20usize);
        let entries: Vec<Country> = (0..n)
            .map(|i| Country {
                code: code(i * 3),
                name: format!("C{i}"),
                centroid: Some((rng.random_range(-80.0..80.0), rng.random_range(-180.0..180.0))),
            })
            .collect();
        let registry = CountryRegistry::new(entries.clone()).unwrap();
        let mut table = HofstedeTable::default();
        for (i, c) in entries.iter().enumerate() {
            let mut row: [Option<f64>; 6] = std::array::from_fn(|_| Some(rng.random_range(0.0..120.0)));
            if i >= 5 {
                for cell in row.iter_mut() {
                    if rng.random::<f64>() < 0.4 {
                        *cell = None;
                    }
                }
            }
            // Some countries are absent from the table entirely.
            if i >= 5 && rng.random::<f64>() < 0.2 {
                continue;
            }
            table.scores.insert(c.code, row);
        }
        let out = impute_hofstede(&table, &registry, 5).unwrap();
        let donors_all: Vec<&Country> = entries.iter().filter(|c| table.is_complete(c.code)).collect();
        for c in &entries {
            let observed = table.scores.get(&c.code).copied().unwrap_or([None; 6]);
            let row = out.scores[&c.code];
            let donors = out.donors.get(&c.code);
            for d in 0..6 {
                match observed[d] {
                    Some(v) if v != row[d] => failures.push(format!("case {case}: observed value changed")),
                    Some(_) => {}
                    None => {
                        let donors = donors.expect("imputed country has donors");
                        let vals: Vec<f64> = donors.iter().map(|x| table.scores[x][d].unwrap()).collect();
                        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        if row[d] < lo || row[d] > hi {
                            failures.push(format!("case {case}: {} outside donor range", row[d]));
                        }
                    }
                }
            }
            // Donors are the five nearest complete countries.
            if let Some(donors) = donors {
                let here = c.centroid.unwrap();
                let mut ranked: Vec<(f64, CountryCode)> = donors_all
                    .iter()
                    .map(|x| (great_circle_km(here, x.centroid.unwrap()), x.code))
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let expected: Vec<CountryCode> = ranked.iter().take(5).map(|r| r.1).collect();
                if &expected != donors {
                    failures.push(format!("case {case}: wrong donors for {}", c.code));
                }
            }
        }
    }

    // Idempotence on a complete table.
    let complete: Vec<Country> = (0..7)
        .map(|i| Country {
            code: code(i),
            name: String::new(),
            centroid: Some((i as f64, 2.0 * i as f64)),
        })
        .collect();
    let registry = CountryRegistry::new(complete.clone()).unwrap();
    let mut table = HofstedeTable::default();
    for c in &complete {
        table.scores.insert(c.code, std::array::from_fn(|d| Some(10.0 + d as f64 + c.code.as_str().len() as f64)));
    }
    let once = impute_hofstede(&table, &registry, 5).unwrap();
    let idempotent = once == ImputedHofstedeTable::from_complete(&table)
        && once.provenance.values().all(|p| *p == Provenance::Observed);

    // Too few donors.
    let mut sparse = table.clone();
    for c in complete.iter().skip(3) {
        sparse.scores.get_mut(&c.code).unwrap()[0] = None;
    }
    let donor_error = matches!(
        impute_hofstede(&sparse, &registry, 5),
        Err(Error::InsufficientDonors { needed: 5, available: 3 })
    );

    check(
        failures.is_empty() && idempotent && donor_error,
        format!(
            "100 patterns, {} violations; idempotent {idempotent}; donor-count error {donor_error}",
            failures.len()
        ),
    )
}

fn conservation() -> Outcome {
    let mut rng = common::rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..12usize);
        let years = [2000, 2010];
        let mut tensor = MigrantStockTensor {
            years: years.to_vec(),
            ..Default::default()
        };
        for d in 0..n {
            for &y in &years {
                for o in 0..n {
                    if rng.random::<f64>() < 0.6 {
                        tensor.counts.insert((code(d), y, code(o)), rng.random_range(0.0..1e7f64).floor());
                    }
                }
                if rng.random::<f64>() < 0.7 {
                    tensor.unknown_origin.insert((code(d), y), rng.random_range(0.0..1e6f64));
                }
            }
        }
        let Ok(out) = redistribute_unknown(&tensor) else {
            continue;
        };
        for d in 0..n {
            for &y in &years {
                let foreign = |t: &MigrantStockTensor| -> f64 {
                    t.origins(code(d), y).filter(|&(o, _)| o != code(d)).map(|(_, c)| c).sum::<f64>() + t.unknown(code(d), y)
                };
                let (before, after) = (foreign(&tensor), foreign(&out));
                if before > 0.0 {
                    worst = worst.max((after - before).abs() / before);
                }
            }
        }
    }
    check(worst <= 1e-12, format!("200 tensors, max relative change {worst:.2e}"))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let base = tempfile::tempdir().unwrap();
    let specs: Vec<ModelSpec> = RegressorSet::ALL
        .into_iter()
        .flat_map(|r| ErrorStructure::ALL.into_iter().map(move |e| ModelSpec::new(r, e)))
        .collect();
    let run = |name: &str| {
        let root = base.path().join(name);
        let world = WorldConfig {
            n_countries: 25,
            ..WorldConfig::default()
        };
        let sim = run_simulate(&world, &root.join("data"), None, &FitOptions::default()).unwrap();
        let paths = InputPaths::from(&sim.files);
        run_indicators(&paths, 5, &root.join("indicators")).unwrap();
        run_fit(&paths, 5, &specs, None, &root.join("compare"), &FitOptions::default()).unwrap();
        run_fit(
            &paths,
            5,
            &[ModelSpec::new(RegressorSet::LevelAndDiversity, ErrorStructure::All)],
            None,
            &root.join("fit"),
            &FitOptions::default(),
        )
        .unwrap();
        tree(&root)
    };
    let (a, b) = (run("a"), run("b"));
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    check(
        a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

fn real_data_dir() -> PathBuf {
    std::env::var_os("CULDIV_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).unwrap().join("data"))
}

fn replication() -> Outcome {
    let dir = real_data_dir();
    let paths = InputPaths {
        registry: dir.join("registry.csv"),
        hofstede: dir.join("hofstede.csv"),
        migrants: dir.join("migrants.csv"),
        population: dir.join("population.csv"),
        wgi: dir.join("wgi.csv"),
    };
    let files = [&paths.registry, &paths.hofstede, &paths.migrants, &paths.population, &paths.wgi];
    if let Some(missing) = files.iter().find(|p| !p.exists()) {
        return Outcome::Skip(format!("no real data ({} not found)", missing.display()));
    }
    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let spec = ModelSpec::new(RegressorSet::LevelAndDiversity, ErrorStructure::All);
    let run = match run_fit(&paths, 5, &[spec], None, out.path(), &FitOptions::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("fit failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let r = &run.results[0];
    let stats = r.statistics.as_ref().unwrap();
    let m = r.equations.len();
    let corr: Vec<f64> = (0..m)
        .flat_map(|a| (0..a).map(move |b| (a, b)))
        .map(|(a, b)| stats.residual_corr[(a, b)])
        .collect();
    let phi_ok = r.phi.iter().all(|p| (0.70..=0.92).contains(p));
    let corr_ok = corr.iter().all(|c| (0.2..=0.8).contains(c));
    let r2_ok = (0.60..=0.74).contains(&stats.pooled_r2);
    check(
        r2_ok && phi_ok && corr_ok && secs < 300.0,
        format!(
            "{} observations, M={m}: pooled R2 {:.3}, phi {:?}, residual correlations in [{:.2}, {:.2}], {secs:.1} s",
            r.n_obs,
            stats.pooled_r2,
            r.phi.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            corr.iter().cloned().fold(f64::INFINITY, f64::min),
            corr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("likelihood matches dense oracle", likelihood_oracle),
        ("independent errors collapse to OLS", ols_collapse),
        ("log-likelihood nesting", nesting),
        ("parameter recovery", recovery),
        ("indicators match per-person oracle", indicator_oracle),
        ("imputation bounds, idempotence, donor error", imputation),
        ("redistribution conserves mass", conservation),
        ("end-to-end determinism", determinism),
        ("replication on real data", replication),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {} [{tag}] {name}: {detail}", k + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
