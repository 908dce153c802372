//! CSV and JSON exports.
//!
//! CSV numbers carry 6 significant digits (see [`fmt_sig`]); non-finite
//! values are written as empty cells. JSON keeps full `f64` precision.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{ErrorStructure, FitResult, RegressorSet};
use crate::impute::ImputedHofstedeTable;
use crate::indicators::{IndicatorPanel, SpatialWeights};
use crate::types::Dimension;

/// Formats `v` rounded to 6 significant digits, without exponent notation
/// and without trailing zeros. NaN and infinities become an empty string.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float literal");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

/// Serializes a matrix as a list of rows.
pub fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Serializes optional values with non-finite entries as `null`.
pub fn serialize_option_f64s<S: Serializer>(v: &[Option<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&x.filter(|x| x.is_finite()))?;
    }
    seq.end()
}

/// Writes a header and rows to a CSV file, replacing it.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `code,reason`
pub fn write_exclusions(path: &Path, rows: &[(String, String)]) -> Result<()> {
    write_csv(
        path,
        &["code", "reason"],
        rows.iter().map(|(c, r)| vec![c.clone(), r.clone()]),
    )
}

/// `code,year,dimension,cli,cdi`, one row per grid cell and dimension.
pub fn write_indicators(path: &Path, panel: &IndicatorPanel) -> Result<()> {
    let rows = panel.rows().flat_map(|(code, year, cli, cdi)| {
        Dimension::ALL.into_iter().map(move |d| {
            vec![
                code.to_string(),
                year.to_string(),
                d.label().to_string(),
                fmt_sig(cli[d.index()]),
                cdi.map(|v| fmt_sig(v[d.index()])).unwrap_or_default(),
            ]
        })
    });
    write_csv(path, &["code", "year", "dimension", "cli", "cdi"], rows)
}

/// `code,year,cli_avg,cdi_avg`: simple means over the six dimensions.
pub fn write_indicator_averages(path: &Path, panel: &IndicatorPanel) -> Result<()> {
    let mean = |v: &[f64; 6]| v.iter().sum::<f64>() / 6.0;
    let rows = panel.rows().map(|(code, year, cli, cdi)| {
        vec![
            code.to_string(),
            year.to_string(),
            fmt_sig(mean(cli)),
            cdi.map(|v| fmt_sig(mean(v))).unwrap_or_default(),
        ]
    });
    write_csv(path, &["code", "year", "cli_avg", "cdi_avg"], rows)
}

/// One `weights_<year>.csv` per period with columns `year,dest,origin,weight`,
/// listing nonzero entries only.
pub fn write_weights(dir: &Path, weights: &SpatialWeights) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(weights.years.len());
    for (t, &year) in weights.years.iter().enumerate() {
        let w = &weights.matrices[t];
        let path = dir.join(format!("weights_{year}.csv"));
        let mut rows = Vec::new();
        for (i, dest) in weights.countries.iter().enumerate() {
            for (o, origin) in weights.countries.iter().enumerate() {
                let v = w[(i, o)];
                if v != 0.0 {
                    rows.push(vec![
                        year.to_string(),
                        dest.to_string(),
                        origin.to_string(),
                        fmt_sig(v),
                    ]);
                }
            }
        }
        write_csv(&path, &["year", "dest", "origin", "weight"], rows)?;
        paths.push(path);
    }
    Ok(paths)
}

/// `code,dimension,value,provenance,donors` with donors `;`-separated for
/// imputed cells.
pub fn write_imputation(path: &Path, table: &ImputedHofstedeTable) -> Result<()> {
    let mut rows = Vec::new();
    for (code, scores) in &table.scores {
        let imputed = table.imputed_dims.get(code).copied().unwrap_or([false; 6]);
        let donors = table
            .donors
            .get(code)
            .map(|d| d.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        for d in Dimension::ALL {
            let k = d.index();
            rows.push(vec![
                code.to_string(),
                d.label().to_string(),
                fmt_sig(scores[k]),
                if imputed[k] { "imputed" } else { "observed" }.to_string(),
                if imputed[k] { donors.clone() } else { String::new() },
            ]);
        }
    }
    write_csv(path, &["code", "dimension", "value", "provenance", "donors"], rows)
}

/// `equation,regressor,estimate,std_error,p_value,stars`
pub fn write_coefficients(path: &Path, fit: &FitResult) -> Result<()> {
    let rows = fit.coefficients.iter().map(|c| {
        vec![
            c.equation.clone(),
            c.regressor.clone(),
            fmt_sig(c.estimate),
            fmt_sig(c.std_error),
            fmt_sig(c.p_value),
            c.stars.to_string(),
        ]
    });
    write_csv(
        path,
        &["equation", "regressor", "estimate", "std_error", "p_value", "stars"],
        rows,
    )
}

/// Regressors in rows, equations in columns. Each equation gets estimate,
/// stars and standard-error columns.
pub fn write_coefficient_table(path: &Path, fit: &FitResult) -> Result<()> {
    let mut header = vec!["regressor".to_string()];
    for eq in &fit.equations {
        header.push(eq.clone());
        header.push(format!("{eq}_stars"));
        header.push(format!("{eq}_se"));
    }
    let mut names: Vec<&str> = fit.regressors.iter().map(String::as_str).collect();
    for extra in ["lambda", "phi"] {
        if fit.coefficients.iter().any(|c| c.regressor == extra) {
            names.push(extra);
        }
    }
    let rows = names.into_iter().map(|reg| {
        let mut row = vec![reg.to_string()];
        for eq in &fit.equations {
            match fit.coefficient(eq, reg) {
                Some(c) => row.extend([fmt_sig(c.estimate), c.stars.to_string(), fmt_sig(c.std_error)]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, rows)
}

/// `regressors,error_structure,loglik,n_params,n_obs,convergence`
pub fn write_loglik(path: &Path, fits: &[FitResult]) -> Result<()> {
    let rows = fits.iter().map(|f| {
        vec![
            f.spec.regressors.cli_name().to_string(),
            f.spec.errors.cli_name().to_string(),
            fmt_sig(f.loglik),
            f.n_params.to_string(),
            f.n_obs.to_string(),
            f.convergence.as_str().to_string(),
        ]
    });
    write_csv(
        path,
        &["regressors", "error_structure", "loglik", "n_params", "n_obs", "convergence"],
        rows,
    )
}

/// Log-likelihood grid with regressor sets in rows and error structures
/// in columns. Cells for specifications that were not fitted stay empty.
pub fn write_loglik_table(path: &Path, fits: &[FitResult]) -> Result<()> {
    let mut header = vec!["regressors"];
    header.extend(ErrorStructure::ALL.iter().map(|e| e.title()));
    let rows = RegressorSet::ALL
        .into_iter()
        .filter(|r| fits.iter().any(|f| f.spec.regressors == *r))
        .map(|r| {
            let mut row = vec![r.title().to_string()];
            for e in ErrorStructure::ALL {
                row.push(
                    fits.iter()
                        .find(|f| f.spec.regressors == r && f.spec.errors == e)
                        .map(|f| fmt_sig(f.loglik))
                        .unwrap_or_default(),
                );
            }
            row
        });
    write_csv(path, &header, rows)
}

/// `regressors,error_structure,<equations...>,pooled,mean`
pub fn write_r2(path: &Path, fits: &[FitResult]) -> Result<()> {
    let Some(first) = fits.first() else {
        return write_csv(path, &["regressors", "error_structure", "pooled", "mean"], Vec::new());
    };
    let mut header = vec!["regressors", "error_structure"];
    header.extend(first.equations.iter().map(String::as_str));
    header.extend(["pooled", "mean"]);
    let mut rows = Vec::new();
    for f in fits {
        let stats = f
            .statistics
            .as_ref()
            .ok_or_else(|| Error::Domain("fit statistics have not been computed".into()))?;
        let mut row = vec![
            f.spec.regressors.cli_name().to_string(),
            f.spec.errors.cli_name().to_string(),
        ];
        row.extend(stats.r2.iter().map(|v| fmt_sig(*v)));
        row.push(fmt_sig(stats.pooled_r2));
        row.push(fmt_sig(stats.mean_r2));
        rows.push(row);
    }
    write_csv(path, &header, rows)
}

/// Innovation covariance: variances on the diagonal, covariances below it
/// and correlations above it.
pub fn write_residual_cov(path: &Path, fit: &FitResult) -> Result<()> {
    let stats = fit
        .statistics
        .as_ref()
        .ok_or_else(|| Error::Domain("fit statistics have not been computed".into()))?;
    let mut header = vec!["equation"];
    header.extend(fit.equations.iter().map(String::as_str));
    let m = fit.equations.len();
    let rows = (0..m).map(|a| {
        let mut row = vec![fit.equations[a].clone()];
        row.extend((0..m).map(|b| {
            if a >= b {
                fmt_sig(stats.residual_cov[(a, b)])
            } else {
                fmt_sig(stats.residual_corr[(a, b)])
            }
        }));
        row
    });
    write_csv(path, &header, rows)
}
