use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use super::design::DesignMatrices;
use super::fit::{FitResult, FitStatistics};
use crate::error::{Error, Result};

/// Two-sided p-value of a z statistic under the normal approximation.
pub fn p_value(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    let normal = Normal::standard();
    2.0 * normal.sf(z.abs())
}

/// `***` p < 0.001, `**` p < 0.01, `*` p < 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Adds R² (per equation and pooled) computed from raw residuals
/// `y − Xθ̂`, and the covariance and correlation of the innovations.
pub fn fit_statistics(mut result: FitResult, design: &DesignMatrices) -> Result<FitResult> {
    let m = design.n_equations();
    if result.theta.shape() != (design.n_regressors(), m) {
        return Err(Error::Domain("fit does not match the design".into()));
    }
    let resid = &design.y - &design.x * &result.theta;
    let mut r2 = Vec::with_capacity(m);
    let (mut ssr_total, mut sst_total) = (0.0, 0.0);
    for j in 0..m {
        let y = design.y.column(j);
        let mean = y.mean();
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        if sst == 0.0 {
            return Err(Error::ZeroVariance(design.equations[j].clone()));
        }
        let ssr = resid.column(j).norm_squared();
        r2.push(1.0 - ssr / sst);
        ssr_total += ssr;
        sst_total += sst;
    }
    let mean_r2 = r2.iter().sum::<f64>() / m as f64;

    let e = &result.innovations;
    let cov = e.tr_mul(e) / e.nrows() as f64;
    let corr = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            1.0
        } else {
            cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()
        }
    });
    result.statistics = Some(FitStatistics {
        r2,
        pooled_r2: 1.0 - ssr_total / sst_total,
        mean_r2,
        residual_cov: cov,
        residual_corr: corr,
    });
    Ok(result)
}
