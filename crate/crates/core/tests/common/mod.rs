//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use culdiv_core::{CountryCode, DesignMatrices, ErrorParams, SpatialWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonnegative weights with zero diagonal and row sums in [0, 1].
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, periods: usize) -> SpatialWeights {
    let matrices = (0..periods)
        .map(|_| {
            let mut w = DMatrix::from_fn(n, n, |i, o| if i == o { 0.0 } else { rng.random::<f64>() });
            for i in 0..n {
                let s = w.row(i).sum();
                if s > 0.0 {
                    let target = rng.random_range(0.2..1.0);
                    w.row_mut(i).scale_mut(target / s);
                }
            }
            w
        })
        .collect();
    SpatialWeights {
        countries: (0..n).map(|i| CountryCode::nth(i).unwrap()).collect(),
        years: (1..=periods as i32).collect(),
        matrices,
    }
}

/// Random Σ = A Aᵀ + 0.1 I.
pub fn random_sigma(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(m, m) * 0.1
}

/// Balanced design with an intercept and `p − 1` uniform regressors, and
/// arbitrary responses.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, periods: usize, m: usize, p: usize) -> DesignMatrices {
    let rows = n * periods;
    let x = DMatrix::from_fn(rows, p, |_, k| if k == 0 { 1.0 } else { rng.random::<f64>() });
    let y = DMatrix::from_fn(rows, m, |_, _| rng.random_range(-2.0..2.0));
    let obs = (0..periods).flat_map(|t| (0..n).map(move |i| (i, t))).collect();
    let mut regressors = vec!["const".to_string()];
    regressors.extend((1..p).map(|k| format!("x{k}")));
    DesignMatrices::new(
        (0..n).map(|i| CountryCode::nth(i).unwrap()).collect(),
        (1..=periods as i32).collect(),
        (1..=m).map(|j| format!("y{j}")).collect(),
        regressors,
        obs,
        y,
        x,
    )
    .unwrap()
}

/// Gaussian log-density of the stacked responses of a balanced design,
/// with covariance assembled from the dense innovation map.
///
/// Stacking is equation-major: index `j·n + r` for design row `r`. With
/// `A_j = I − λ_j W − φ_j L` (W block-diagonal over periods, L the one
/// period lag), `e = A u` has covariance `Σ ⊗ I`, so
/// `Cov(u) = A⁻¹ (Σ ⊗ I) A⁻ᵀ`.
pub fn dense_loglik(design: &DesignMatrices, weights: &SpatialWeights, theta: &DMatrix<f64>, err: &ErrorParams) -> f64 {
    let n = design.countries.len();
    let periods = design.years.len();
    let rows = design.n_obs();
    assert_eq!(rows, n * periods, "oracle needs a balanced panel");
    let m = design.n_equations();
    let dim = rows * m;

    let mut a = DMatrix::zeros(dim, dim);
    for j in 0..m {
        for t in 0..periods {
            for i in 0..n {
                let r = t * n + i;
                a[(j * rows + r, j * rows + r)] = 1.0;
                for o in 0..n {
                    a[(j * rows + r, j * rows + t * n + o)] -= err.lambda[j] * weights.matrices[t][(i, o)];
                }
                if t > 0 {
                    a[(j * rows + r, j * rows + (t - 1) * n + i)] -= err.phi[j];
                }
            }
        }
    }
    let mut cov_e = DMatrix::zeros(dim, dim);
    for j in 0..m {
        for k in 0..m {
            for r in 0..rows {
                cov_e[(j * rows + r, k * rows + r)] = err.sigma[(j, k)];
            }
        }
    }
    let a_inv = a.try_inverse().expect("invertible filter");
    let omega = &a_inv * cov_e * a_inv.transpose();
    let omega = (&omega + omega.transpose()) * 0.5;

    let resid = &design.y - &design.x * theta;
    let u = DVector::from_fn(dim, |idx, _| resid[(idx % rows, idx / rows)]);
    let chol = omega.cholesky().expect("positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = u.dot(&chol.solve(&u));
    -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Per-equation least squares through the normal equations.
pub fn ols(design: &DesignMatrices) -> DMatrix<f64> {
    let xtx = design.x.tr_mul(&design.x);
    let xty = design.x.tr_mul(&design.y);
    xtx.lu().solve(&xty).expect("full rank")
}

/// Population mean and standard deviation of an explicit list.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
