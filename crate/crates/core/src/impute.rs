//! Filling gaps in the inputs: nearest-neighbour Hofstede scores for origin
//! countries and proportional redistribution of unknown-origin migrants.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{CountryRegistry, HofstedeTable, MigrantStockTensor};
use crate::types::{CountryCode, Dimension};

/// Mean Earth radius in kilometres.
const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Imputed,
}

/// Hofstede scores with no gaps, over every registered country.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputedHofstedeTable {
    pub scores: BTreeMap<CountryCode, [f64; 6]>,
    pub provenance: BTreeMap<CountryCode, Provenance>,
    /// Which dimensions of each imputed country were filled in.
    pub imputed_dims: BTreeMap<CountryCode, [bool; 6]>,
    /// Donor countries used for each imputed country, nearest first.
    pub donors: BTreeMap<CountryCode, Vec<CountryCode>>,
}

impl ImputedHofstedeTable {
    pub fn get(&self, code: CountryCode, dim: Dimension) -> Option<f64> {
        self.scores.get(&code).map(|row| row[dim.index()])
    }

    /// Table built from fully observed rows only.
    pub fn from_complete(table: &HofstedeTable) -> Self {
        let mut out = ImputedHofstedeTable {
            scores: BTreeMap::new(),
            provenance: BTreeMap::new(),
            imputed_dims: BTreeMap::new(),
            donors: BTreeMap::new(),
        };
        for (&code, row) in &table.scores {
            if let Some(full) = complete_row(row) {
                out.scores.insert(code, full);
                out.provenance.insert(code, Provenance::Observed);
            }
        }
        out
    }
}

fn complete_row(row: &[Option<f64>; 6]) -> Option<[f64; 6]> {
    let mut out = [0.0; 6];
    for (dst, src) in out.iter_mut().zip(row) {
        *dst = (*src)?;
    }
    Some(out)
}

/// Great-circle distance in kilometres between two (lat, lon) points in degrees.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Completes the Hofstede table over all registered countries.
///
/// Donors are countries whose six scores are all observed. Each country with
/// a gap takes, for every missing dimension, the unweighted mean over its
/// `k_neighbors` nearest donors (ties broken by ascending code); observed
/// dimensions are left alone.
pub fn impute_hofstede(
    table: &HofstedeTable,
    registry: &CountryRegistry,
    k_neighbors: usize,
) -> Result<ImputedHofstedeTable> {
    if k_neighbors == 0 {
        return Err(Error::Config("k_neighbors must be positive".into()));
    }
    let mut out = ImputedHofstedeTable::from_complete(table);

    let mut universe: Vec<CountryCode> = registry.entries().iter().map(|c| c.code).collect();
    universe.extend(table.scores.keys().copied());
    universe.sort();
    universe.dedup();

    let targets: Vec<CountryCode> = universe
        .iter()
        .copied()
        .filter(|c| !out.scores.contains_key(c))
        .collect();
    if targets.is_empty() {
        return Ok(out);
    }

    let donors: Vec<(CountryCode, (f64, f64), [f64; 6])> = out
        .scores
        .iter()
        .filter_map(|(&code, &row)| {
            let centroid = registry.get(code)?.centroid?;
            Some((code, centroid, row))
        })
        .collect();
    if donors.len() < k_neighbors {
        return Err(Error::InsufficientDonors {
            needed: k_neighbors,
            available: donors.len(),
        });
    }

    for target in targets {
        let centroid = registry
            .get(target)
            .and_then(|c| c.centroid)
            .ok_or_else(|| Error::MissingCentroid(target.to_string()))?;
        let mut ranked: Vec<(f64, CountryCode, &[f64; 6])> = donors
            .iter()
            .map(|(code, c, row)| (great_circle_km(centroid, *c), *code, row))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(k_neighbors);

        let observed = table.scores.get(&target).copied().unwrap_or([None; 6]);
        let mut row = [0.0; 6];
        let mut filled = [false; 6];
        for dim in Dimension::ALL {
            let d = dim.index();
            row[d] = match observed[d] {
                Some(v) => v,
                None => {
                    filled[d] = true;
                    ranked.iter().map(|(_, _, r)| r[d]).sum::<f64>() / ranked.len() as f64
                }
            };
        }
        out.scores.insert(target, row);
        out.provenance.insert(target, Provenance::Imputed);
        out.imputed_dims.insert(target, filled);
        out.donors
            .insert(target, ranked.iter().map(|&(_, c, _)| c).collect());
    }
    Ok(out)
}

/// Splits unknown-origin migrants across origins in proportion to each
/// origin's worldwide emigrant stock in the same year.
///
/// Emigrant totals exclude native counts and are computed from the input
/// tensor before any redistribution. A destination never receives a share
/// attributed to itself. Counts stay fractional.
pub fn redistribute_unknown(tensor: &MigrantStockTensor) -> Result<MigrantStockTensor> {
    let mut emigrants: BTreeMap<(i32, CountryCode), f64> = BTreeMap::new();
    for (&(dest, year, origin), &count) in &tensor.counts {
        if origin != dest && count > 0.0 {
            *emigrants.entry((year, origin)).or_insert(0.0) += count;
        }
    }

    let mut out = tensor.clone();
    for (&(dest, year), &unknown) in &tensor.unknown_origin {
        if unknown <= 0.0 {
            continue;
        }
        let shares: Vec<(CountryCode, f64)> = emigrants
            .range((year, CountryCode::nth(0).unwrap())..=(year, CountryCode::nth(17575).unwrap()))
            .filter(|(&(_, o), _)| o != dest)
            .map(|(&(_, o), &e)| (o, e))
            .collect();
        let total: f64 = shares.iter().map(|(_, e)| e).sum();
        if total <= 0.0 {
            return Err(Error::NoEmigrants {
                dest: dest.to_string(),
                year,
            });
        }
        for (origin, e) in shares {
            *out.counts.entry((dest, year, origin)).or_insert(0.0) += unknown * e / total;
        }
        out.unknown_origin.insert((dest, year), 0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Country;

    fn code(s: &str) -> CountryCode {
        s.parse().unwrap()
    }

    fn registry(points: &[(&str, f64, f64)]) -> CountryRegistry {
        CountryRegistry::new(
            points
                .iter()
                .map(|&(c, lat, lon)| Country {
                    code: code(c),
                    name: c.into(),
                    centroid: Some((lat, lon)),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn great_circle_known_distances() {
        // Quarter of the equator.
        let d = great_circle_km((0.0, 0.0), (0.0, 90.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert_eq!(great_circle_km((10.0, 20.0), (10.0, 20.0)), 0.0);
        let antipode = great_circle_km((45.0, 10.0), (-45.0, -170.0));
        assert!((antipode - EARTH_RADIUS_KM * std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn complete_country_is_unchanged() {
        let reg = registry(&[("AAA", 0.0, 0.0)]);
        let mut t = HofstedeTable::default();
        t.scores.insert(code("AAA"), [Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0), Some(6.0)]);
        let imp = impute_hofstede(&t, &reg, 5).unwrap();
        assert_eq!(imp.scores[&code("AAA")], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(imp.provenance[&code("AAA")], Provenance::Observed);
    }

    #[test]
    fn mean_of_five_donors() {
        let reg = registry(&[
            ("TGT", 0.0, 0.0),
            ("DAA", 0.0, 1.0),
            ("DBB", 0.0, 2.0),
            ("DCC", 0.0, 3.0),
            ("DDD", 0.0, 4.0),
            ("DEE", 0.0, 5.0),
        ]);
        let mut t = HofstedeTable::default();
        for (c, pdi) in [("DAA", 40.0), ("DBB", 50.0), ("DCC", 60.0), ("DDD", 70.0), ("DEE", 80.0)] {
            t.scores.insert(code(c), [Some(pdi), Some(10.0), Some(10.0), Some(10.0), Some(10.0), Some(10.0)]);
        }
        t.scores.insert(code("TGT"), [None, Some(99.0), Some(99.0), Some(99.0), Some(99.0), Some(99.0)]);
        let imp = impute_hofstede(&t, &reg, 5).unwrap();
        assert_eq!(imp.scores[&code("TGT")], [60.0, 99.0, 99.0, 99.0, 99.0, 99.0]);
        assert_eq!(imp.imputed_dims[&code("TGT")], [true, false, false, false, false, false]);
        assert_eq!(imp.provenance[&code("TGT")], Provenance::Imputed);
    }

    #[test]
    fn only_five_nearest_contribute() {
        // Brute-force: six donors on a ring of known distances, the farthest
        // has an extreme score that must not leak into the mean.
        let pts = [
            ("TGT", 10.0, 10.0),
            ("AAA", 10.0, 11.0),
            ("BBB", 12.0, 10.0),
            ("CCC", 7.0, 10.0),
            ("DDD", 10.0, 14.5),
            ("EEE", 5.0, 5.0),
            ("FFF", -30.0, 60.0),
        ];
        let reg = registry(&pts);
        let mut t = HofstedeTable::default();
        let scores = [("AAA", 10.0), ("BBB", 20.0), ("CCC", 30.0), ("DDD", 40.0), ("EEE", 50.0), ("FFF", 120.0)];
        for (c, s) in scores {
            t.scores.insert(code(c), [Some(s); 6]);
        }
        let mut dists: Vec<(f64, &str, f64)> = pts[1..]
            .iter()
            .zip(scores)
            .map(|(&(c, lat, lon), (_, s))| (great_circle_km((10.0, 10.0), (lat, lon)), c, s))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expected: f64 = dists[..5].iter().map(|d| d.2).sum::<f64>() / 5.0;
        assert_eq!(dists[5].1, "FFF");

        let imp = impute_hofstede(&t, &reg, 5).unwrap();
        assert!((imp.scores[&code("TGT")][0] - expected).abs() < 1e-12);
        assert_eq!(expected, 30.0);
        assert!(!imp.donors[&code("TGT")].contains(&code("FFF")));
    }

    #[test]
    fn ties_broken_by_code() {
        // Two donors at the same distance, k = 1: the lower code wins.
        let reg = registry(&[("TGT", 0.0, 0.0), ("ZZZ", 0.0, 1.0), ("AAA", 0.0, -1.0)]);
        let mut t = HofstedeTable::default();
        t.scores.insert(code("ZZZ"), [Some(90.0); 6]);
        t.scores.insert(code("AAA"), [Some(10.0); 6]);
        let imp = impute_hofstede(&t, &reg, 1).unwrap();
        assert_eq!(imp.scores[&code("TGT")], [10.0; 6]);
    }

    #[test]
    fn too_few_donors_and_missing_centroid() {
        let reg = registry(&[("TGT", 0.0, 0.0), ("AAA", 0.0, 1.0)]);
        let mut t = HofstedeTable::default();
        t.scores.insert(code("AAA"), [Some(1.0); 6]);
        assert!(matches!(
            impute_hofstede(&t, &reg, 5),
            Err(Error::InsufficientDonors { needed: 5, available: 1 })
        ));

        let reg = CountryRegistry::new(vec![
            Country { code: code("TGT"), name: "t".into(), centroid: None },
            Country { code: code("AAA"), name: "a".into(), centroid: Some((0.0, 1.0)) },
        ])
        .unwrap();
        assert!(matches!(impute_hofstede(&t, &reg, 1), Err(Error::MissingCentroid(c)) if c == "TGT"));
    }

    #[test]
    fn proportional_split() {
        let mut t = MigrantStockTensor::default();
        let (d, a, b, x) = (code("DST"), code("AAA"), code("BBB"), code("XXX"));
        t.counts.insert((x, 2000, a), 30.0);
        t.counts.insert((x, 2000, b), 70.0);
        t.counts.insert((d, 2000, d), 500.0);
        t.unknown_origin.insert((d, 2000), 10.0);
        t.years = vec![2000];
        let r = redistribute_unknown(&t).unwrap();
        assert!((r.count(d, 2000, a) - 3.0).abs() < 1e-12);
        assert!((r.count(d, 2000, b) - 7.0).abs() < 1e-12);
        assert_eq!(r.count(d, 2000, d), 500.0);
        assert_eq!(r.unknown(d, 2000), 0.0);
    }

    #[test]
    fn destination_never_receives_itself() {
        let mut t = MigrantStockTensor::default();
        let (a, b) = (code("AAA"), code("BBB"));
        t.counts.insert((b, 2000, a), 50.0);
        t.counts.insert((a, 2000, b), 50.0);
        t.unknown_origin.insert((a, 2000), 4.0);
        t.years = vec![2000];
        let r = redistribute_unknown(&t).unwrap();
        assert_eq!(r.count(a, 2000, a), 0.0);
        assert_eq!(r.count(a, 2000, b), 54.0);
    }

    #[test]
    fn no_unknowns_is_identity_and_no_emigrants_errors() {
        let mut t = MigrantStockTensor::default();
        let (a, b) = (code("AAA"), code("BBB"));
        t.counts.insert((a, 2000, b), 5.0);
        t.years = vec![2000];
        assert_eq!(redistribute_unknown(&t).unwrap(), t);

        let mut t = MigrantStockTensor::default();
        t.counts.insert((a, 2000, a), 5.0);
        t.unknown_origin.insert((a, 2000), 1.0);
        assert!(matches!(redistribute_unknown(&t), Err(Error::NoEmigrants { .. })));
    }
}
