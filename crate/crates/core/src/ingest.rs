//! Loading and aligning the input datasets.
//!
//! Every loader is fail-fast: a row that violates an invariant (negative
//! count, duplicate key, non-positive population, ...) aborts the load with
//! an error naming the file and line. Rows that are well-formed but cannot be
//! used (unknown country code, empty population cell) are kept out of the
//! data and listed in the returned [`LoadReport`], so that
//! `rows_read == rows_stored + skipped.len()` holds for every file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{CountryCode, Dimension, Governance};

/// Reserved origin token for migrants whose country of birth is unknown.
pub const UNKNOWN_ORIGIN: &str = "OTHER";

pub const REGISTRY_HEADER: [&str; 4] = ["code", "name", "lat", "lon"];
pub const HOFSTEDE_HEADER: [&str; 7] = ["code", "pdi", "idv", "mas", "uai", "lto", "ivr"];
pub const MIGRANTS_HEADER: [&str; 4] = ["dest", "year", "origin", "count"];
pub const POPULATION_HEADER: [&str; 3] = ["code", "year", "pop"];
pub const WGI_HEADER: [&str; 8] = ["code", "year", "va", "pv", "ge", "rq", "rl", "cc"];

/// A row that was read but not stored, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub line: u64,
    pub code: String,
    pub reason: String,
}

/// Per-file accounting of what a loader did with its input.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub file: String,
    pub rows_read: usize,
    pub rows_stored: usize,
    pub skipped: Vec<SkippedRow>,
    pub warnings: Vec<String>,
}

impl LoadReport {
    fn new(file: &Path) -> Self {
        LoadReport {
            file: file.display().to_string(),
            ..Default::default()
        }
    }

    fn skip(&mut self, line: u64, code: &str, reason: impl Into<String>) {
        self.skipped.push(SkippedRow {
            line,
            code: code.to_string(),
            reason: reason.into(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Country {
    pub code: CountryCode,
    pub name: String,
    /// (latitude, longitude) in degrees.
    pub centroid: Option<(f64, f64)>,
}

/// All countries known to the pipeline, sorted by code.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CountryRegistry {
    entries: Vec<Country>,
}

impl CountryRegistry {
    pub fn new(mut entries: Vec<Country>) -> Result<Self> {
        entries.sort_by_key(|c| c.code);
        for pair in entries.windows(2) {
            if pair[0].code == pair[1].code {
                return Err(Error::Config(format!(
                    "duplicate registry entry for {}",
                    pair[0].code
                )));
            }
        }
        for c in &entries {
            if let Some((lat, lon)) = c.centroid {
                check_centroid(lat, lon).map_err(Error::Config)?;
            }
        }
        Ok(CountryRegistry { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: Read>(reader: R, source: &Path) -> Result<Self> {
        let mut rows = CsvRows::new(reader, source, &REGISTRY_HEADER)?;
        let mut entries = Vec::new();
        let mut seen: BTreeMap<CountryCode, u64> = BTreeMap::new();
        while let Some((line, rec)) = rows.next_record()? {
            let code: CountryCode = rec[0]
                .parse()
                .map_err(|_| rows.invalid(line, format!("invalid country code `{}`", &rec[0])))?;
            if let Some(&first_line) = seen.get(&code) {
                return Err(Error::DuplicateRow {
                    path: source.to_path_buf(),
                    key: code.to_string(),
                    first_line,
                    line,
                });
            }
            seen.insert(code, line);
            let lat = parse_optional(&rec[2]).map_err(|m| rows.invalid(line, m))?;
            let lon = parse_optional(&rec[3]).map_err(|m| rows.invalid(line, m))?;
            let centroid = match (lat, lon) {
                (Some(lat), Some(lon)) => {
                    check_centroid(lat, lon).map_err(|m| rows.invalid(line, m))?;
                    Some((lat, lon))
                }
                (None, None) => None,
                _ => return Err(rows.invalid(line, "latitude and longitude must both be present or both empty")),
            };
            entries.push(Country {
                code,
                name: rec[1].trim().to_string(),
                centroid,
            });
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Country] {
        &self.entries
    }

    pub fn get(&self, code: CountryCode) -> Option<&Country> {
        self.entries
            .binary_search_by_key(&code, |c| c.code)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn contains(&self, code: CountryCode) -> bool {
        self.get(code).is_some()
    }

    /// Parses `raw` and checks that it names a registered country.
    fn resolve(&self, raw: &str) -> std::result::Result<CountryCode, String> {
        let code: CountryCode = raw
            .parse()
            .map_err(|_| format!("invalid country code `{}`", raw.trim()))?;
        if self.contains(code) {
            Ok(code)
        } else {
            Err(format!("country `{code}` not in registry"))
        }
    }
}

fn check_centroid(lat: f64, lon: f64) -> std::result::Result<(), String> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        Err(format!("centroid ({lat}, {lon}) out of range"))
    } else {
        Ok(())
    }
}

/// Hofstede scores per country; `None` marks a missing dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HofstedeTable {
    pub scores: BTreeMap<CountryCode, [Option<f64>; 6]>,
}

impl HofstedeTable {
    pub fn get(&self, code: CountryCode, dim: Dimension) -> Option<f64> {
        self.scores.get(&code).and_then(|row| row[dim.index()])
    }

    /// All six dimensions observed.
    pub fn is_complete(&self, code: CountryCode) -> bool {
        self.scores
            .get(&code)
            .is_some_and(|row| row.iter().all(Option::is_some))
    }
}

/// Migrant stock: persons resident in `dest` at `year` born in `origin`.
/// The native population, when known, is stored under `origin == dest`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MigrantStockTensor {
    pub counts: BTreeMap<(CountryCode, i32, CountryCode), f64>,
    pub unknown_origin: BTreeMap<(CountryCode, i32), f64>,
    pub years: Vec<i32>,
}

impl MigrantStockTensor {
    pub fn count(&self, dest: CountryCode, year: i32, origin: CountryCode) -> f64 {
        self.counts.get(&(dest, year, origin)).copied().unwrap_or(0.0)
    }

    pub fn unknown(&self, dest: CountryCode, year: i32) -> f64 {
        self.unknown_origin.get(&(dest, year)).copied().unwrap_or(0.0)
    }

    /// Iterates `(origin, count)` over all recorded origins of one destination-year.
    pub fn origins(
        &self,
        dest: CountryCode,
        year: i32,
    ) -> impl Iterator<Item = (CountryCode, f64)> + '_ {
        let lo = (dest, year, CountryCode::nth(0).unwrap());
        let hi = (dest, year, CountryCode::nth(26 * 26 * 26 - 1).unwrap());
        self.counts.range(lo..=hi).map(|(&(_, _, o), &c)| (o, c))
    }

    /// Sum of foreign-born counts (origin ≠ dest) plus unknown origin.
    pub fn foreign_born(&self, dest: CountryCode, year: i32) -> f64 {
        self.origins(dest, year)
            .filter(|&(o, _)| o != dest)
            .map(|(_, c)| c)
            .sum::<f64>()
            + self.unknown(dest, year)
    }

    /// Whether the destination-year has any record at all.
    pub fn covers(&self, dest: CountryCode, year: i32) -> bool {
        self.origins(dest, year).next().is_some()
            || self.unknown_origin.contains_key(&(dest, year))
    }

    pub fn destinations(&self) -> BTreeSet<CountryCode> {
        self.counts
            .keys()
            .map(|&(d, _, _)| d)
            .chain(self.unknown_origin.keys().map(|&(d, _)| d))
            .collect()
    }
}

/// Population and governance scores per country-year.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountryPanel {
    pub population: BTreeMap<(CountryCode, i32), f64>,
    pub wgi: BTreeMap<(CountryCode, i32), [Option<f64>; 6]>,
}

impl CountryPanel {
    pub fn population(&self, code: CountryCode, year: i32) -> Option<f64> {
        self.population.get(&(code, year)).copied()
    }

    pub fn wgi(&self, code: CountryCode, year: i32, ind: Governance) -> Option<f64> {
        self.wgi.get(&(code, year)).and_then(|row| row[ind.index()])
    }

    pub fn wgi_complete(&self, code: CountryCode, year: i32) -> bool {
        self.wgi
            .get(&(code, year))
            .is_some_and(|row| row.iter().all(Option::is_some))
    }
}

/// A loaded value with the accounting of each file that fed it.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub reports: Vec<LoadReport>,
}

pub fn load_hofstede(path: impl AsRef<Path>, registry: &CountryRegistry) -> Result<Loaded<HofstedeTable>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_hofstede_from(file, path, registry)
}

pub fn load_hofstede_from<R: Read>(
    reader: R,
    source: &Path,
    registry: &CountryRegistry,
) -> Result<Loaded<HofstedeTable>> {
    let mut rows = CsvRows::new(reader, source, &HOFSTEDE_HEADER)?;
    let mut report = LoadReport::new(source);
    let mut table = HofstedeTable::default();
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    while let Some((line, rec)) = rows.next_record()? {
        report.rows_read += 1;
        let raw = rec[0].trim().to_string();
        if let Some(&first_line) = seen.get(&raw) {
            return Err(Error::DuplicateRow {
                path: source.to_path_buf(),
                key: raw,
                first_line,
                line,
            });
        }
        seen.insert(raw.clone(), line);
        let code = match registry.resolve(&raw) {
            Ok(c) => c,
            Err(reason) => {
                report.skip(line, &raw, reason);
                continue;
            }
        };
        let mut row = [None; 6];
        for dim in Dimension::ALL {
            let cell = rec[dim.index() + 1].trim();
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if !(0.0..=120.0).contains(&v) {
                        return Err(rows.invalid(line, format!("{dim} score {v} outside [0, 120]")));
                    }
                    row[dim.index()] = Some(v);
                }
                _ => report
                    .warnings
                    .push(format!("line {line}: unparseable {dim} value `{cell}` for {code}, treated as missing")),
            }
        }
        table.scores.insert(code, row);
        report.rows_stored += 1;
    }
    Ok(Loaded {
        value: table,
        reports: vec![report],
    })
}

pub fn load_migrant_stock(
    path: impl AsRef<Path>,
    registry: &CountryRegistry,
) -> Result<Loaded<MigrantStockTensor>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_migrant_stock_from(file, path, registry)
}

pub fn load_migrant_stock_from<R: Read>(
    reader: R,
    source: &Path,
    registry: &CountryRegistry,
) -> Result<Loaded<MigrantStockTensor>> {
    let mut rows = CsvRows::new(reader, source, &MIGRANTS_HEADER)?;
    let mut report = LoadReport::new(source);
    let mut tensor = MigrantStockTensor::default();
    let mut first_seen: BTreeMap<(CountryCode, i32, CountryCode), u64> = BTreeMap::new();
    let mut years = BTreeSet::new();
    while let Some((line, rec)) = rows.next_record()? {
        report.rows_read += 1;
        let year = parse_year(&rec[1]).map_err(|m| rows.invalid(line, m))?;
        let count_cell = rec[3].trim();
        let count: f64 = count_cell
            .parse()
            .map_err(|_| rows.invalid(line, format!("count `{count_cell}` is not a number")))?;
        if !count.is_finite() || count < 0.0 {
            return Err(rows.invalid(line, format!("count {count_cell} is negative or not finite")));
        }
        let dest = match registry.resolve(&rec[0]) {
            Ok(c) => c,
            Err(reason) => {
                report.skip(line, rec[0].trim(), reason);
                continue;
            }
        };
        let origin_raw = rec[2].trim();
        if origin_raw == UNKNOWN_ORIGIN {
            *tensor.unknown_origin.entry((dest, year)).or_insert(0.0) += count;
        } else {
            let origin = match registry.resolve(origin_raw) {
                Ok(c) => c,
                Err(reason) => {
                    report.skip(line, origin_raw, reason);
                    continue;
                }
            };
            let key = (dest, year, origin);
            if let Some(&first_line) = first_seen.get(&key) {
                return Err(Error::DuplicateRow {
                    path: source.to_path_buf(),
                    key: format!("({dest}, {year}, {origin})"),
                    first_line,
                    line,
                });
            }
            first_seen.insert(key, line);
            tensor.counts.insert(key, count);
        }
        years.insert(year);
        report.rows_stored += 1;
    }
    tensor.years = years.into_iter().collect();
    Ok(Loaded {
        value: tensor,
        reports: vec![report],
    })
}

pub fn load_panel(
    path_pop: impl AsRef<Path>,
    path_wgi: impl AsRef<Path>,
    registry: &CountryRegistry,
) -> Result<Loaded<CountryPanel>> {
    let (pp, pw) = (path_pop.as_ref(), path_wgi.as_ref());
    let fp = File::open(pp).map_err(|e| Error::io(pp, e))?;
    let fw = File::open(pw).map_err(|e| Error::io(pw, e))?;
    load_panel_from(fp, pp, fw, pw, registry)
}

pub fn load_panel_from<R1: Read, R2: Read>(
    pop_reader: R1,
    pop_source: &Path,
    wgi_reader: R2,
    wgi_source: &Path,
    registry: &CountryRegistry,
) -> Result<Loaded<CountryPanel>> {
    let mut panel = CountryPanel::default();

    let mut rows = CsvRows::new(pop_reader, pop_source, &POPULATION_HEADER)?;
    let mut pop_report = LoadReport::new(pop_source);
    let mut seen: BTreeMap<(CountryCode, i32), u64> = BTreeMap::new();
    while let Some((line, rec)) = rows.next_record()? {
        pop_report.rows_read += 1;
        let year = parse_year(&rec[1]).map_err(|m| rows.invalid(line, m))?;
        let value = parse_optional(&rec[2]).map_err(|m| rows.invalid(line, m))?;
        if let Some(v) = value {
            if v <= 0.0 {
                return Err(rows.invalid(line, format!("population {v} is not positive")));
            }
        }
        let code = match registry.resolve(&rec[0]) {
            Ok(c) => c,
            Err(reason) => {
                pop_report.skip(line, rec[0].trim(), reason);
                continue;
            }
        };
        if let Some(&first_line) = seen.get(&(code, year)) {
            return Err(Error::DuplicateRow {
                path: pop_source.to_path_buf(),
                key: format!("({code}, {year})"),
                first_line,
                line,
            });
        }
        seen.insert((code, year), line);
        match value {
            Some(v) => {
                panel.population.insert((code, year), v);
                pop_report.rows_stored += 1;
            }
            None => pop_report.skip(line, code.as_str(), "missing population"),
        }
    }

    let mut rows = CsvRows::new(wgi_reader, wgi_source, &WGI_HEADER)?;
    let mut wgi_report = LoadReport::new(wgi_source);
    let mut seen: BTreeMap<(CountryCode, i32), u64> = BTreeMap::new();
    while let Some((line, rec)) = rows.next_record()? {
        wgi_report.rows_read += 1;
        let year = parse_year(&rec[1]).map_err(|m| rows.invalid(line, m))?;
        let code = match registry.resolve(&rec[0]) {
            Ok(c) => c,
            Err(reason) => {
                wgi_report.skip(line, rec[0].trim(), reason);
                continue;
            }
        };
        if let Some(&first_line) = seen.get(&(code, year)) {
            return Err(Error::DuplicateRow {
                path: wgi_source.to_path_buf(),
                key: format!("({code}, {year})"),
                first_line,
                line,
            });
        }
        seen.insert((code, year), line);
        let mut row = [None; 6];
        for ind in Governance::ALL {
            let cell = rec[ind.index() + 2].trim();
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if !(-2.5..=2.5).contains(&v) {
                        wgi_report.warnings.push(format!(
                            "line {line}: {ind} value {v} for {code} ({year}) outside [-2.5, 2.5]"
                        ));
                    }
                    row[ind.index()] = Some(v);
                }
                _ => wgi_report.warnings.push(format!(
                    "line {line}: unparseable {ind} value `{cell}` for {code}, treated as missing"
                )),
            }
        }
        panel.wgi.insert((code, year), row);
        wgi_report.rows_stored += 1;
    }

    let pop_years: BTreeSet<i32> = panel.population.keys().map(|&(_, y)| y).collect();
    let wgi_years: BTreeSet<i32> = panel.wgi.keys().map(|&(_, y)| y).collect();
    for y in wgi_years.difference(&pop_years) {
        wgi_report
            .warnings
            .push(format!("year {y} has governance data but no population data"));
    }
    for y in pop_years.difference(&wgi_years) {
        pop_report
            .warnings
            .push(format!("year {y} has population data but no governance data"));
    }

    Ok(Loaded {
        value: panel,
        reports: vec![pop_report, wgi_report],
    })
}

/// A country left out of the regression sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub code: String,
    pub reason: String,
}

/// Countries and years retained for indicator construction and estimation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationGrid {
    pub countries: Vec<CountryCode>,
    pub years: Vec<i32>,
    pub exclusions: Vec<Exclusion>,
}

/// Intersects the three sources.
///
/// Years: those present in every panel input. Countries need observed
/// scores on all six dimensions and complete population and migrant records
/// in every retained year, with recorded stock not above population.
/// Governance data must exist for at least one retained year.
pub fn build_observation_grid(
    tensor: &MigrantStockTensor,
    panel: &CountryPanel,
    hofstede: &HofstedeTable,
) -> Result<ObservationGrid> {
    let pop_years: BTreeSet<i32> = panel.population.keys().map(|&(_, y)| y).collect();
    let wgi_years: BTreeSet<i32> = panel.wgi.keys().map(|&(_, y)| y).collect();
    let years: Vec<i32> = tensor
        .years
        .iter()
        .copied()
        .filter(|y| pop_years.contains(y) && wgi_years.contains(y))
        .collect();
    if years.is_empty() {
        return Err(Error::EmptyGrid(
            "no year is covered by the migrant stock, population and governance files together".into(),
        ));
    }

    let mut candidates: BTreeSet<CountryCode> = tensor.destinations();
    candidates.extend(panel.population.keys().map(|&(c, _)| c));
    candidates.extend(panel.wgi.keys().map(|&(c, _)| c));
    candidates.extend(hofstede.scores.keys().copied());

    let mut countries = Vec::new();
    let mut exclusions = Vec::new();
    for code in candidates {
        match grid_exclusion_reason(code, &years, tensor, panel, hofstede) {
            None => countries.push(code),
            Some(reason) => exclusions.push(Exclusion {
                code: code.to_string(),
                reason,
            }),
        }
    }
    if countries.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "all {} candidate countries were excluded",
            exclusions.len()
        )));
    }
    Ok(ObservationGrid {
        countries,
        years,
        exclusions,
    })
}

fn grid_exclusion_reason(
    code: CountryCode,
    years: &[i32],
    tensor: &MigrantStockTensor,
    panel: &CountryPanel,
    hofstede: &HofstedeTable,
) -> Option<String> {
    if !hofstede.scores.contains_key(&code) {
        return Some("no Hofstede scores".into());
    }
    if !hofstede.is_complete(code) {
        let missing: Vec<&str> = Dimension::ALL
            .iter()
            .filter(|&&d| hofstede.get(code, d).is_none())
            .map(|d| d.label())
            .collect();
        return Some(format!("missing Hofstede scores: {}", missing.join(" ")));
    }
    for &y in years {
        let Some(pop) = panel.population(code, y) else {
            return Some(format!("no population in {y}"));
        };
        if !tensor.covers(code, y) {
            return Some(format!("no migrant stock in {y}"));
        }
        let recorded = tensor.foreign_born(code, y) + tensor.count(code, y, code);
        if recorded > pop {
            return Some(format!("migrant stock exceeds population in {y}"));
        }
    }
    let any_wgi = years
        .iter()
        .any(|&y| panel.wgi.get(&(code, y)).is_some_and(|r| r.iter().any(Option::is_some)));
    if !any_wgi {
        return Some("no governance data in retained years".into());
    }
    None
}

struct CsvRows<R: Read> {
    reader: csv::Reader<R>,
    path: PathBuf,
    width: usize,
}

impl<R: Read> CsvRows<R> {
    fn new(reader: R, path: &Path, expected: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        let found: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
        if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(Error::MalformedHeader {
                path: path.to_path_buf(),
                expected: expected.join(","),
                found: headers.iter().collect::<Vec<_>>().join(","),
            });
        }
        Ok(CsvRows {
            reader,
            path: path.to_path_buf(),
            width: expected.len(),
        })
    }

    fn next_record(&mut self) -> Result<Option<(u64, csv::StringRecord)>> {
        let mut rec = csv::StringRecord::new();
        let more = self
            .reader
            .read_record(&mut rec)
            .map_err(|e| Error::csv(&self.path, e))?;
        if !more {
            return Ok(None);
        }
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != self.width {
            return Err(self.invalid(
                line,
                format!("expected {} fields, found {}", self.width, rec.len()),
            ));
        }
        Ok(Some((line, rec)))
    }

    fn invalid(&self, line: u64, message: impl Into<String>) -> Error {
        Error::InvalidRow {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

fn parse_year(cell: &str) -> std::result::Result<i32, String> {
    cell.trim()
        .parse::<i32>()
        .map_err(|_| format!("year `{}` is not an integer", cell.trim()))
}

fn parse_optional(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("`{cell}` is not a finite number")),
    }
}
