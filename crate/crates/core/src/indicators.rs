//! Cultural level and diversity indicators, and the migrant-share spatial
//! weight matrices.
//!
//! Each resident of a country is assigned the Hofstede scores of their
//! country of birth. The level indicator is the population mean of those
//! scores and the diversity indicator their population standard deviation
//! (divide-by-N). Residents not accounted for by any origin in the migrant
//! stock are counted as native-born, so composition weights always sum to one.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::impute::ImputedHofstedeTable;
use crate::ingest::{CountryPanel, MigrantStockTensor, ObservationGrid};
use crate::types::{CountryCode, Dimension};

/// CLI and CDI per (country, year, dimension) over the observation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorPanel {
    pub countries: Vec<CountryCode>,
    pub years: Vec<i32>,
    /// Row-major over (country, year).
    cli: Vec<[f64; 6]>,
    cdi: Option<Vec<[f64; 6]>>,
}

impl IndicatorPanel {
    /// Builds a panel from precomputed values laid out over (country, year).
    pub fn from_parts(
        countries: Vec<CountryCode>,
        years: Vec<i32>,
        cli: Vec<[f64; 6]>,
        cdi: Option<Vec<[f64; 6]>>,
    ) -> Result<Self> {
        let n = countries.len() * years.len();
        if cli.len() != n || cdi.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::Config(format!(
                "indicator panel needs {n} (country, year) cells"
            )));
        }
        Ok(IndicatorPanel {
            countries,
            years,
            cli,
            cdi,
        })
    }

    fn cell(&self, country: usize, year: usize) -> usize {
        country * self.years.len() + year
    }

    fn position(&self, code: CountryCode, year: i32) -> Option<usize> {
        let c = self.countries.binary_search(&code).ok().or_else(|| {
            self.countries.iter().position(|&x| x == code)
        })?;
        let t = self.years.iter().position(|&y| y == year)?;
        Some(self.cell(c, t))
    }

    pub fn cli(&self, code: CountryCode, year: i32, dim: Dimension) -> Option<f64> {
        self.position(code, year).map(|p| self.cli[p][dim.index()])
    }

    pub fn cdi(&self, code: CountryCode, year: i32, dim: Dimension) -> Option<f64> {
        let p = self.position(code, year)?;
        self.cdi.as_ref().map(|v| v[p][dim.index()])
    }

    pub fn has_diversity(&self) -> bool {
        self.cdi.is_some()
    }

    /// Iterates `(country, year, cli row, cdi row)` in (country, year) order.
    pub fn rows(&self) -> impl Iterator<Item = (CountryCode, i32, &[f64; 6], Option<&[f64; 6]>)> {
        self.countries.iter().enumerate().flat_map(move |(c, &code)| {
            self.years.iter().enumerate().map(move |(t, &year)| {
                let p = self.cell(c, t);
                (code, year, &self.cli[p], self.cdi.as_ref().map(|v| &v[p]))
            })
        })
    }
}

/// Population composition of one destination-year by country of birth.
/// Weights sum to one; the native group absorbs any coverage gap.
fn composition(
    tensor: &MigrantStockTensor,
    panel: &CountryPanel,
    dest: CountryCode,
    year: i32,
) -> Result<Vec<(CountryCode, f64)>> {
    let pop = panel
        .population(dest, year)
        .ok_or_else(|| Error::Domain(format!("no population for {dest} in {year}")))?;
    if tensor.unknown(dest, year) > 0.0 {
        return Err(Error::Domain(format!(
            "unknown-origin migrants for {dest} in {year} must be redistributed first"
        )));
    }
    let mut weights: Vec<(CountryCode, f64)> = tensor
        .origins(dest, year)
        .filter(|&(o, c)| o != dest && c > 0.0)
        .map(|(o, c)| (o, c / pop))
        .collect();
    let foreign: f64 = weights.iter().map(|(_, w)| w).sum();
    let native = 1.0 - foreign;
    if native < -1e-12 {
        return Err(Error::Domain(format!(
            "foreign-born stock of {dest} in {year} exceeds its population"
        )));
    }
    weights.push((dest, native.max(0.0)));
    Ok(weights)
}

fn score(hofstede: &ImputedHofstedeTable, origin: CountryCode) -> Result<&[f64; 6]> {
    hofstede.scores.get(&origin).ok_or_else(|| Error::MissingScore {
        origin: origin.to_string(),
        dimension: "all".into(),
    })
}

/// Population-weighted mean Hofstede score per (country, year, dimension).
pub fn compute_cli(
    tensor: &MigrantStockTensor,
    hofstede: &ImputedHofstedeTable,
    panel: &CountryPanel,
    grid: &ObservationGrid,
) -> Result<IndicatorPanel> {
    let mut cli = Vec::with_capacity(grid.countries.len() * grid.years.len());
    for &dest in &grid.countries {
        for &year in &grid.years {
            let mut row = [0.0; 6];
            for (origin, w) in composition(tensor, panel, dest, year)? {
                if w == 0.0 {
                    continue;
                }
                let h = score(hofstede, origin)?;
                for d in 0..6 {
                    row[d] += w * h[d];
                }
            }
            cli.push(row);
        }
    }
    Ok(IndicatorPanel {
        countries: grid.countries.clone(),
        years: grid.years.clone(),
        cli,
        cdi: None,
    })
}

/// Population-weighted standard deviation around the level indicator, with
/// the same composition weights as [`compute_cli`].
pub fn compute_cdi(
    tensor: &MigrantStockTensor,
    hofstede: &ImputedHofstedeTable,
    panel: &CountryPanel,
    cli: IndicatorPanel,
    grid: &ObservationGrid,
) -> Result<IndicatorPanel> {
    if cli.countries != grid.countries || cli.years != grid.years {
        return Err(Error::Domain("level indicators were computed on a different grid".into()));
    }
    let mut cdi = Vec::with_capacity(cli.cli.len());
    for (c, &dest) in grid.countries.iter().enumerate() {
        for (t, &year) in grid.years.iter().enumerate() {
            let mean = cli.cli[cli.cell(c, t)];
            let mut var = [0.0; 6];
            for (origin, w) in composition(tensor, panel, dest, year)? {
                if w == 0.0 {
                    continue;
                }
                let h = score(hofstede, origin)?;
                for d in 0..6 {
                    var[d] += w * (h[d] - mean[d]).powi(2);
                }
            }
            cdi.push(var.map(f64::sqrt));
        }
    }
    Ok(IndicatorPanel {
        cdi: Some(cdi),
        ..cli
    })
}

pub fn compute_indicators(
    tensor: &MigrantStockTensor,
    hofstede: &ImputedHofstedeTable,
    panel: &CountryPanel,
    grid: &ObservationGrid,
) -> Result<IndicatorPanel> {
    let cli = compute_cli(tensor, hofstede, panel, grid)?;
    compute_cdi(tensor, hofstede, panel, cli, grid)
}

/// Time-varying spatial weights over the grid countries.
///
/// `w[t][i][o]` is the share of the foreign-born population of `i` born in
/// `o`. Entries for origins outside the grid are dropped without
/// renormalizing, so row sums may fall below one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialWeights {
    pub countries: Vec<CountryCode>,
    pub years: Vec<i32>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl SpatialWeights {
    pub fn for_year(&self, year: i32) -> Option<&DMatrix<f64>> {
        self.years
            .iter()
            .position(|&y| y == year)
            .map(|t| &self.matrices[t])
    }

    pub fn max_row_sum(&self) -> f64 {
        self.matrices
            .iter()
            .flat_map(|w| w.row_iter().map(|r| r.sum()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Largest eigenvalue modulus of each matrix.
    pub fn spectral_radii(&self) -> Vec<f64> {
        self.matrices
            .iter()
            .map(|w| {
                w.clone()
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Checks nonnegativity, zero diagonal, and row sums at most one.
    pub fn validate(&self) -> Result<()> {
        if self.matrices.len() != self.years.len() {
            return Err(Error::Config("one weight matrix per year is required".into()));
        }
        let n = self.countries.len();
        for (w, year) in self.matrices.iter().zip(&self.years) {
            if w.nrows() != n || w.ncols() != n {
                return Err(Error::Config(format!("weight matrix for {year} is not {n}x{n}")));
            }
            for i in 0..n {
                if w[(i, i)] != 0.0 {
                    return Err(Error::Config(format!("weight matrix for {year} has a nonzero diagonal")));
                }
                let row = w.row(i);
                if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::Config(format!("weight matrix for {year} has a negative entry")));
                }
                if row.sum() > 1.0 + 1e-12 {
                    return Err(Error::Config(format!("weight matrix for {year} has a row sum above one")));
                }
            }
        }
        Ok(())
    }
}

pub fn build_weights(
    tensor: &MigrantStockTensor,
    panel: &CountryPanel,
    grid: &ObservationGrid,
) -> Result<SpatialWeights> {
    let n = grid.countries.len();
    let mut matrices = Vec::with_capacity(grid.years.len());
    for &year in &grid.years {
        let mut w = DMatrix::zeros(n, n);
        for (i, &dest) in grid.countries.iter().enumerate() {
            let foreign: f64 = tensor
                .origins(dest, year)
                .filter(|&(o, _)| o != dest)
                .map(|(_, c)| c)
                .sum::<f64>()
                + tensor.unknown(dest, year);
            if foreign == 0.0 {
                continue;
            }
            // Foreign-born total, i.e. population minus natives; when no
            // native count is recorded the residual population is native.
            let denominator = match tensor.counts.get(&(dest, year, dest)) {
                Some(&native) => {
                    let pop = panel.population(dest, year).ok_or_else(|| {
                        Error::Domain(format!("no population for {dest} in {year}"))
                    })?;
                    pop - native
                }
                None => foreign,
            };
            if denominator <= 0.0 {
                return Err(Error::Domain(format!(
                    "non-positive foreign-born denominator for {dest} in {year}"
                )));
            }
            for (o, &origin) in grid.countries.iter().enumerate() {
                if o != i {
                    w[(i, o)] = tensor.count(dest, year, origin) / denominator;
                }
            }
        }
        matrices.push(w);
    }
    Ok(SpatialWeights {
        countries: grid.countries.clone(),
        years: grid.years.clone(),
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::Provenance;
    use std::collections::BTreeMap;

    fn code(s: &str) -> CountryCode {
        s.parse().unwrap()
    }

    fn hof(entries: &[(&str, f64)]) -> ImputedHofstedeTable {
        let mut t = ImputedHofstedeTable {
            scores: BTreeMap::new(),
            provenance: BTreeMap::new(),
            imputed_dims: BTreeMap::new(),
            donors: BTreeMap::new(),
        };
        for &(c, v) in entries {
            t.scores.insert(code(c), [v; 6]);
            t.provenance.insert(code(c), Provenance::Observed);
        }
        t
    }

    fn grid(codes: &[&str]) -> ObservationGrid {
        ObservationGrid {
            countries: codes.iter().map(|c| code(c)).collect(),
            years: vec![2000],
            exclusions: vec![],
        }
    }

    #[test]
    fn hand_example_cli_58_cdi_16() {
        let (i, o) = (code("III"), code("OOO"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, i), 8.0);
        t.counts.insert((i, 2000, o), 2.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 10.0);
        let h = hof(&[("III", 50.0), ("OOO", 90.0)]);
        let g = grid(&["III"]);
        let ind = compute_indicators(&t, &h, &p, &g).unwrap();
        assert_eq!(ind.cli(i, 2000, Dimension::Pdi), Some(58.0));
        assert_eq!(ind.cdi(i, 2000, Dimension::Pdi), Some(16.0));
    }

    #[test]
    fn no_foreign_born_gives_own_scores() {
        let i = code("III");
        let t = MigrantStockTensor::default();
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 10.0);
        let h = hof(&[("III", 37.5)]);
        let ind = compute_indicators(&t, &h, &p, &grid(&["III"])).unwrap();
        assert_eq!(ind.cli(i, 2000, Dimension::Uai), Some(37.5));
        assert_eq!(ind.cdi(i, 2000, Dimension::Uai), Some(0.0));
    }

    #[test]
    fn unredistributed_unknowns_are_rejected() {
        let i = code("III");
        let mut t = MigrantStockTensor::default();
        t.unknown_origin.insert((i, 2000), 1.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 10.0);
        let h = hof(&[("III", 1.0)]);
        assert!(compute_cli(&t, &h, &p, &grid(&["III"])).is_err());
    }

    #[test]
    fn missing_origin_score_is_error() {
        let (i, o) = (code("III"), code("OOO"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, o), 2.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 10.0);
        let h = hof(&[("III", 1.0)]);
        assert!(matches!(
            compute_cli(&t, &h, &p, &grid(&["III"])),
            Err(Error::MissingScore { .. })
        ));
    }

    #[test]
    fn weights_single_origin_and_zero_row() {
        let (i, o) = (code("III"), code("OOO"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, i), 8.0);
        t.counts.insert((i, 2000, o), 2.0);
        t.counts.insert((o, 2000, o), 5.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 10.0);
        p.population.insert((o, 2000), 5.0);
        let w = build_weights(&t, &p, &grid(&["III", "OOO"])).unwrap();
        let m = &w.matrices[0];
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m.row(1).sum(), 0.0);
        assert_eq!(m[(0, 0)], 0.0);
        w.validate().unwrap();
    }

    #[test]
    fn weights_three_country_hand_example() {
        let (i, a, b) = (code("III"), code("AAA"), code("BBB"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, i), 8.0);
        t.counts.insert((i, 2000, a), 3.0);
        t.counts.insert((i, 2000, b), 1.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 12.0);
        let w = build_weights(&t, &p, &grid(&["III", "AAA", "BBB"])).unwrap();
        let row: Vec<f64> = w.matrices[0].row(0).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.75, 0.25]);
    }

    #[test]
    fn weights_not_renormalized_when_origin_outside_grid() {
        let (i, a, b) = (code("III"), code("AAA"), code("BBB"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, a), 3.0);
        t.counts.insert((i, 2000, b), 1.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 12.0);
        let w = build_weights(&t, &p, &grid(&["III", "AAA"])).unwrap();
        assert_eq!(w.matrices[0][(0, 1)], 0.75);
    }

    #[test]
    fn weights_denominator_error() {
        let (i, a) = (code("III"), code("AAA"));
        let mut t = MigrantStockTensor::default();
        t.counts.insert((i, 2000, i), 12.0);
        t.counts.insert((i, 2000, a), 3.0);
        let mut p = CountryPanel::default();
        p.population.insert((i, 2000), 12.0);
        assert!(build_weights(&t, &p, &grid(&["III", "AAA"])).is_err());
    }
}
