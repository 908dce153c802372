use nalgebra::DMatrix;
use serde::Serialize;

use super::{ModelSpec, RegressorSet};
use crate::error::{Error, Result};
use crate::impute::ImputedHofstedeTable;
use crate::indicators::IndicatorPanel;
use crate::ingest::{CountryPanel, ObservationGrid};
use crate::types::{CountryCode, Dimension, Governance};

/// Cultural scores are divided by this before entering the design.
pub const REGRESSOR_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedObservation {
    pub code: String,
    pub year: i32,
    pub reason: String,
}

/// Stacked observations for all equations. Every equation shares the same
/// regressors; rows are (country, period) cells ordered by period, then
/// country.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub countries: Vec<CountryCode>,
    pub years: Vec<i32>,
    pub equations: Vec<String>,
    pub regressors: Vec<String>,
    /// (country index, period index) of each row.
    pub obs: Vec<(usize, usize)>,
    /// n × M responses.
    pub y: DMatrix<f64>,
    /// n × p regressors, intercept first.
    pub x: DMatrix<f64>,
    pub dropped: Vec<DroppedObservation>,
}

impl DesignMatrices {
    pub fn new(
        countries: Vec<CountryCode>,
        years: Vec<i32>,
        equations: Vec<String>,
        regressors: Vec<String>,
        obs: Vec<(usize, usize)>,
        y: DMatrix<f64>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let n = obs.len();
        if n == 0 {
            return Err(Error::Config("design has no observations".into()));
        }
        if y.nrows() != n || x.nrows() != n {
            return Err(Error::Config("design row counts disagree".into()));
        }
        if y.ncols() != equations.len() || x.ncols() != regressors.len() {
            return Err(Error::Config("design column counts disagree with names".into()));
        }
        for pair in obs.windows(2) {
            if (pair[0].1, pair[0].0) >= (pair[1].1, pair[1].0) {
                return Err(Error::Config("design rows must be sorted by (period, country) without repeats".into()));
            }
        }
        if obs.iter().any(|&(i, t)| i >= countries.len() || t >= years.len()) {
            return Err(Error::Config("design row index out of range".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("design contains non-finite values".into()));
        }
        Ok(DesignMatrices {
            countries,
            years,
            equations,
            regressors,
            obs,
            y,
            x,
            dropped: Vec::new(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn n_equations(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }

    /// Verifies full column rank, naming each column that is (numerically)
    /// a combination of the ones before it.
    pub fn check_rank(&self) -> Result<()> {
        let collinear = collinear_columns(&self.x);
        if collinear.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient(
                collinear.into_iter().map(|c| self.regressors[c].clone()).collect(),
            ))
        }
    }
}

fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for c in 0..x.ncols() {
        let mut cols = kept.clone();
        cols.push(c);
        let mut sub = x.select_columns(&cols);
        for mut col in sub.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        let sv = sub.singular_values();
        let max = sv.max();
        let min = sv.min();
        if max == 0.0 || min / max < 1e-10 {
            bad.push(c);
        } else {
            kept.push(c);
        }
    }
    bad
}

/// Regressor names in column order for a regressor set.
pub fn regressor_names(set: RegressorSet) -> Vec<String> {
    let mut names = vec!["const".to_string()];
    let level_prefix = match set {
        RegressorSet::HofstedeOnly => "hofstede",
        _ => "level",
    };
    names.extend(Dimension::ALL.iter().map(|d| format!("{level_prefix}_{d}")));
    if set == RegressorSet::LevelAndDiversity {
        names.extend(Dimension::ALL.iter().map(|d| format!("diversity_{d}")));
    }
    names
}

/// Builds the complete-case design. A (country, year) cell missing any
/// governance indicator is dropped from every equation and logged.
pub fn assemble_design(
    indicators: &IndicatorPanel,
    panel: &CountryPanel,
    hofstede: &ImputedHofstedeTable,
    spec: ModelSpec,
    grid: &ObservationGrid,
) -> Result<DesignMatrices> {
    let set = spec.regressors;
    if set == RegressorSet::LevelAndDiversity && !indicators.has_diversity() {
        return Err(Error::Config("diversity indicators have not been computed".into()));
    }
    let names = regressor_names(set);
    let p = names.len();
    let m = Governance::COUNT;

    let mut obs = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for (t, &year) in grid.years.iter().enumerate() {
        for (i, &code) in grid.countries.iter().enumerate() {
            let Some(wgi) = panel.wgi.get(&(code, year)) else {
                dropped.push(DroppedObservation {
                    code: code.to_string(),
                    year,
                    reason: "no governance data".into(),
                });
                continue;
            };
            if let Some(missing) = Governance::ALL.iter().find(|g| wgi[g.index()].is_none()) {
                dropped.push(DroppedObservation {
                    code: code.to_string(),
                    year,
                    reason: format!("missing {missing}"),
                });
                continue;
            }
            let mut row = Vec::with_capacity(p);
            row.push(1.0);
            for dim in Dimension::ALL {
                let v = match set {
                    RegressorSet::HofstedeOnly => hofstede.get(code, dim),
                    _ => indicators.cli(code, year, dim),
                }
                .ok_or_else(|| Error::Domain(format!("no {dim} regressor for {code} in {year}")))?;
                row.push(v / REGRESSOR_SCALE);
            }
            if set == RegressorSet::LevelAndDiversity {
                for dim in Dimension::ALL {
                    let v = indicators
                        .cdi(code, year, dim)
                        .ok_or_else(|| Error::Domain(format!("no {dim} diversity for {code} in {year}")))?;
                    row.push(v / REGRESSOR_SCALE);
                }
            }
            obs.push((i, t));
            x_rows.extend(row);
            y_rows.extend(wgi.iter().map(|v| v.expect("checked above")));
        }
    }
    if obs.is_empty() {
        return Err(Error::EmptyGrid("no complete governance observations".into()));
    }
    let n = obs.len();
    let mut design = DesignMatrices::new(
        grid.countries.clone(),
        grid.years.clone(),
        Governance::ALL.iter().map(|g| g.label().to_string()).collect(),
        names,
        obs,
        DMatrix::from_row_slice(n, m, &y_rows),
        DMatrix::from_row_slice(n, p, &x_rows),
    )?;
    design.dropped = dropped;
    design.check_rank()?;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::ErrorStructure;
    use crate::impute::Provenance;
    use std::collections::BTreeMap;

    fn setup(missing: bool) -> (IndicatorPanel, CountryPanel, ImputedHofstedeTable, ObservationGrid) {
        let codes: Vec<CountryCode> = (0..20).map(|i| CountryCode::nth(i * 7).unwrap()).collect();
        let years = vec![2000, 2005];
        let mut cli = Vec::new();
        let mut cdi = Vec::new();
        let mut panel = CountryPanel::default();
        let mut hof = ImputedHofstedeTable {
            scores: BTreeMap::new(),
            provenance: BTreeMap::new(),
            imputed_dims: BTreeMap::new(),
            donors: BTreeMap::new(),
        };
        for (i, &c) in codes.iter().enumerate() {
            let base: [f64; 6] = std::array::from_fn(|d| ((i * i * 7 + d * d * 13 + i * d * 5 + d) % 31) as f64 * 3.0);
            hof.scores.insert(c, base);
            hof.provenance.insert(c, Provenance::Observed);
            for (t, &y) in years.iter().enumerate() {
                cli.push(std::array::from_fn(|d| base[d] + ((i + t * 3 + d) % 5) as f64));
                cdi.push(std::array::from_fn(|d| ((i * 3 + t * 5 + d * 11) % 17) as f64));
                panel.population.insert((c, y), 1000.0);
                panel.wgi.insert((c, y), [Some(0.1 * i as f64); 6]);
            }
        }
        if missing {
            panel.wgi.get_mut(&(codes[3], 2005)).unwrap()[2] = None;
        }
        let ind = IndicatorPanel::from_parts(codes.clone(), years.clone(), cli, Some(cdi)).unwrap();
        let grid = ObservationGrid {
            countries: codes,
            years,
            exclusions: vec![],
        };
        (ind, panel, hof, grid)
    }

    #[test]
    fn column_counts() {
        let (ind, panel, hof, grid) = setup(false);
        let spec = |r| ModelSpec::new(r, ErrorStructure::All);
        let d = assemble_design(&ind, &panel, &hof, spec(RegressorSet::LevelAndDiversity), &grid).unwrap();
        assert_eq!(d.n_regressors(), 13);
        assert_eq!(d.n_equations(), 6);
        assert_eq!(d.n_obs(), 40);
        assert_eq!(d.regressors[7], "diversity_PDI");
        let d = assemble_design(&ind, &panel, &hof, spec(RegressorSet::LevelOnly), &grid).unwrap();
        assert_eq!(d.n_regressors(), 7);
        let d = assemble_design(&ind, &panel, &hof, spec(RegressorSet::HofstedeOnly), &grid).unwrap();
        assert_eq!(d.regressors[1], "hofstede_PDI");
        // Static scores repeat over periods.
        assert_eq!(d.x.row(0)[1], d.x.row(20)[1]);
    }

    #[test]
    fn incomplete_cell_dropped_from_all_equations() {
        let (ind, panel, hof, grid) = setup(true);
        let d = assemble_design(
            &ind,
            &panel,
            &hof,
            ModelSpec::new(RegressorSet::LevelOnly, ErrorStructure::All),
            &grid,
        )
        .unwrap();
        assert_eq!(d.n_obs(), 39);
        assert_eq!(d.dropped.len(), 1);
        assert_eq!(d.dropped[0].year, 2005);
        assert!(!d.obs.contains(&(3, 1)));
        assert!(d.obs.contains(&(3, 0)));
    }

    #[test]
    fn rank_deficiency_names_column() {
        let mut x = DMatrix::from_fn(10, 3, |r, c| if c == 0 { 1.0 } else { (r * (c + 1)) as f64 });
        x.set_column(2, &(x.column(1) * 2.0));
        let d = DesignMatrices::new(
            (0..10).map(|i| CountryCode::nth(i).unwrap()).collect(),
            vec![2000],
            vec!["A".into()],
            vec!["const".into(), "a".into(), "b".into()],
            (0..10).map(|i| (i, 0)).collect(),
            DMatrix::zeros(10, 1),
            x,
        )
        .unwrap();
        match d.check_rank() {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["b".to_string()]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }
}
