//! Exact Gaussian likelihood of the innovation representation, its
//! analytic gradient, and the profile over (coefficients, Σ) at fixed
//! spatial and serial parameters.
//!
//! The innovation filter is linear, so the spatial and temporal lags of `y`
//! and every column of `X` are computed once per model. Filtering at given
//! (λ_j, φ_j) is then the combination `v − λ_j·Wv − φ_j·Lv`, and all GLS
//! cross-products follow from nine precomputed Gram blocks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::design::DesignMatrices;
use super::ErrorStructure;
use crate::error::{Error, Result};
use crate::indicators::SpatialWeights;

/// Error-process parameters: spatial λ, serial φ (one per equation) and the
/// innovation covariance Σ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorParams {
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(serialize_with = "crate::report::serialize_matrix")]
    pub sigma: DMatrix<f64>,
}

impl ErrorParams {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.lambda.len() != m || self.phi.len() != m || self.sigma.shape() != (m, m) {
            return Err(Error::Domain(format!("error parameters must have {m} equations")));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.abs() < 1.0)) {
            return Err(Error::Domain(format!("spatial coefficient {l} outside (-1, 1)")));
        }
        if let Some(p) = self.phi.iter().find(|p| !(p.abs() < 1.0)) {
            return Err(Error::Domain(format!("serial coefficient {p} outside (-1, 1)")));
        }
        if (&self.sigma - self.sigma.transpose()).abs().max() > 1e-12 * self.sigma.abs().max().max(1.0) {
            return Err(Error::Domain("innovation covariance is not symmetric".into()));
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::Domain("innovation covariance is not positive definite".into()));
        }
        Ok(())
    }
}

/// Every parameter of the unprofiled likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct FullParameters {
    /// p × M coefficients, one column per equation.
    pub theta: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    /// Lower Cholesky factor of Σ.
    pub chol: DMatrix<f64>,
}

impl FullParameters {
    /// Number of free parameters under `structure`.
    pub fn count(p: usize, m: usize, structure: ErrorStructure) -> usize {
        let cov = if structure.full_covariance() { m * (m + 1) / 2 } else { m };
        m * p + m * structure.spatial() as usize + m * structure.serial() as usize + cov
    }

    /// Unconstrained coordinates: θ (equation-major), atanh λ, atanh φ, then
    /// the log-Cholesky factor of Σ (row-major lower triangle, log on the
    /// diagonal; diagonal only for restricted covariance).
    pub fn pack(&self, structure: ErrorStructure) -> Vec<f64> {
        let (p, m) = self.theta.shape();
        let mut x = Vec::with_capacity(Self::count(p, m, structure));
        for j in 0..m {
            x.extend(self.theta.column(j).iter());
        }
        if structure.spatial() {
            x.extend(self.lambda.iter().map(|l| l.atanh()));
        }
        if structure.serial() {
            x.extend(self.phi.iter().map(|f| f.atanh()));
        }
        for i in 0..m {
            if structure.full_covariance() {
                for k in 0..i {
                    x.push(self.chol[(i, k)]);
                }
            }
            x.push(self.chol[(i, i)].ln());
        }
        x
    }

    pub fn unpack(x: &[f64], p: usize, m: usize, structure: ErrorStructure) -> Self {
        let mut it = x.iter().copied();
        let mut theta = DMatrix::zeros(p, m);
        for j in 0..m {
            for k in 0..p {
                theta[(k, j)] = it.next().expect("parameter vector too short");
            }
        }
        let mut lambda = vec![0.0; m];
        if structure.spatial() {
            for l in lambda.iter_mut() {
                *l = it.next().expect("parameter vector too short").tanh();
            }
        }
        let mut phi = vec![0.0; m];
        if structure.serial() {
            for f in phi.iter_mut() {
                *f = it.next().expect("parameter vector too short").tanh();
            }
        }
        let mut chol = DMatrix::zeros(m, m);
        for i in 0..m {
            if structure.full_covariance() {
                for k in 0..i {
                    chol[(i, k)] = it.next().expect("parameter vector too short");
                }
            }
            chol[(i, i)] = it.next().expect("parameter vector too short").exp();
        }
        FullParameters {
            theta,
            lambda,
            phi,
            chol,
        }
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }
}

struct YearBlock {
    start: usize,
    len: usize,
    /// Weights among the countries observed in this period.
    w: DMatrix<f64>,
}

/// Log-determinant of the spatial filter summed over periods, and its
/// derivative with respect to λ.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct SpatialTerm {
    pub logdet: f64,
    pub dlogdet: f64,
}

/// Result of profiling out θ and Σ at fixed (λ, φ).
#[derive(Debug, Clone)]
pub(crate) struct ProfilePoint {
    pub value: f64,
    pub theta: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub innovations: DMatrix<f64>,
    /// ∂ value / ∂(λ_j, φ_j) on the natural scale (envelope gradient).
    pub grad_lambda: Vec<f64>,
    pub grad_phi: Vec<f64>,
    pub inner_iterations: usize,
}

/// Precomputed model state for one design and set of spatial weights.
pub struct Model<'a> {
    design: &'a DesignMatrices,
    blocks: Vec<YearBlock>,
    lag: Vec<Option<usize>>,
    /// X, WX, LX (n × p).
    zx: [DMatrix<f64>; 3],
    /// y, Wy, Ly (n × M).
    zy: [DMatrix<f64>; 3],
    /// zx[a]ᵀ zx[b]
    gram: Vec<Vec<DMatrix<f64>>>,
    /// zx[a]ᵀ zy[b]
    cross: Vec<Vec<DMatrix<f64>>>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl<'a> Model<'a> {
    pub fn new(design: &'a DesignMatrices, weights: &SpatialWeights) -> Result<Self> {
        weights.validate()?;
        let country_map: Vec<usize> = design
            .countries
            .iter()
            .map(|c| {
                weights
                    .countries
                    .iter()
                    .position(|w| w == c)
                    .ok_or_else(|| Error::Domain(format!("no spatial weights for country {c}")))
            })
            .collect::<Result<_>>()?;
        let year_map: Vec<usize> = design
            .years
            .iter()
            .map(|y| {
                weights
                    .years
                    .iter()
                    .position(|w| w == y)
                    .ok_or_else(|| Error::Domain(format!("no spatial weights for year {y}")))
            })
            .collect::<Result<_>>()?;

        let n = design.n_obs();
        let mut blocks: Vec<YearBlock> = Vec::new();
        let mut start = 0;
        while start < n {
            let t = design.obs[start].1;
            let len = design.obs[start..].iter().take_while(|o| o.1 == t).count();
            let idx: Vec<usize> = design.obs[start..start + len]
                .iter()
                .map(|&(i, _)| country_map[i])
                .collect();
            let full = &weights.matrices[year_map[t]];
            let w = DMatrix::from_fn(len, len, |r, c| full[(idx[r], idx[c])]);
            blocks.push(YearBlock { start, len, w });
            start += len;
        }

        let mut row_of = std::collections::HashMap::with_capacity(n);
        for (r, &cell) in design.obs.iter().enumerate() {
            row_of.insert(cell, r);
        }
        let lag: Vec<Option<usize>> = design
            .obs
            .iter()
            .map(|&(i, t)| if t == 0 { None } else { row_of.get(&(i, t - 1)).copied() })
            .collect();

        let mut model = Model {
            design,
            blocks,
            lag,
            zx: [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)],
            zy: [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)],
            gram: Vec::new(),
            cross: Vec::new(),
        };
        model.zx = [
            design.x.clone(),
            model.spatial_lag(&design.x),
            model.time_lag(&design.x),
        ];
        model.zy = [
            design.y.clone(),
            model.spatial_lag(&design.y),
            model.time_lag(&design.y),
        ];
        model.gram = (0..3)
            .map(|a| (0..3).map(|b| model.zx[a].tr_mul(&model.zx[b])).collect())
            .collect();
        model.cross = (0..3)
            .map(|a| (0..3).map(|b| model.zx[a].tr_mul(&model.zy[b])).collect())
            .collect();
        Ok(model)
    }

    pub fn design(&self) -> &DesignMatrices {
        self.design
    }

    pub fn n_obs(&self) -> usize {
        self.design.n_obs()
    }

    /// W_t v within each period.
    pub fn spatial_lag(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for b in &self.blocks {
            let lagged = &b.w * v.rows(b.start, b.len);
            out.rows_mut(b.start, b.len).copy_from(&lagged);
        }
        out
    }

    /// Same country's value in the previous period; zero when absent.
    pub fn time_lag(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (r, l) in self.lag.iter().enumerate() {
            if let Some(l) = *l {
                out.row_mut(r).copy_from(&v.row(l));
            }
        }
        out
    }

    /// Σ_t ln|det(I − λ W_t)| and, optionally, its λ-derivative −Σ_t tr((I − λW_t)⁻¹ W_t).
    pub(crate) fn spatial_term(&self, lambda: f64, with_derivative: bool) -> Result<SpatialTerm> {
        if !(lambda.abs() < 1.0) {
            return Err(Error::Domain(format!("spatial coefficient {lambda} outside (-1, 1)")));
        }
        if lambda == 0.0 {
            // Zero diagonal: tr(W_t) = 0.
            return Ok(SpatialTerm::default());
        }
        let mut term = SpatialTerm::default();
        for b in &self.blocks {
            let a = DMatrix::identity(b.len, b.len) - &b.w * lambda;
            let lu = a.lu();
            let det = lu.determinant();
            if !det.is_finite() || det.abs() < 1e-300 {
                return Err(Error::Domain(format!(
                    "spatial filter I - {lambda}·W is numerically singular"
                )));
            }
            term.logdet += det.abs().ln();
            if with_derivative {
                let z = lu
                    .solve(&b.w)
                    .ok_or_else(|| Error::Domain("spatial filter is singular".into()))?;
                term.dlogdet -= z.trace();
            }
        }
        Ok(term)
    }

    /// Innovation matrix e (n × M) at the given coefficients and filter parameters.
    pub fn innovations(&self, theta: &DMatrix<f64>, lambda: &[f64], phi: &[f64]) -> DMatrix<f64> {
        let m = self.design.n_equations();
        let mut e = DMatrix::zeros(self.n_obs(), m);
        for j in 0..m {
            let c = [1.0, -lambda[j], -phi[j]];
            let th = theta.column(j);
            let mut col = DVector::zeros(self.n_obs());
            for a in 0..3 {
                if c[a] != 0.0 {
                    col += (self.zy[a].column(j) - &self.zx[a] * th) * c[a];
                }
            }
            e.set_column(j, &col);
        }
        e
    }

    /// (Wu_j, Lu_j) for raw residuals u_j = y_j − X θ_j.
    fn lagged_residuals(&self, theta: &DMatrix<f64>, j: usize) -> (DVector<f64>, DVector<f64>) {
        let th = theta.column(j);
        (
            self.zy[1].column(j) - &self.zx[1] * th,
            self.zy[2].column(j) - &self.zx[2] * th,
        )
    }

    fn filtered_gram(&self, cj: [f64; 3], cl: [f64; 3]) -> DMatrix<f64> {
        let p = self.design.n_regressors();
        let mut out = DMatrix::zeros(p, p);
        for a in 0..3 {
            for b in 0..3 {
                let w = cj[a] * cl[b];
                if w != 0.0 {
                    out += &self.gram[a][b] * w;
                }
            }
        }
        out
    }

    /// X̃_jᵀ ỹ_l.
    fn filtered_cross(&self, cj: [f64; 3], cl: [f64; 3], l: usize) -> DVector<f64> {
        let p = self.design.n_regressors();
        let mut out = DVector::zeros(p);
        for a in 0..3 {
            for b in 0..3 {
                let w = cj[a] * cl[b];
                if w != 0.0 {
                    out += self.cross[a][b].column(l) * w;
                }
            }
        }
        out
    }

    /// Concentrated log-likelihood at fixed (λ, φ). θ and Σ are maximized
    /// exactly: equation-by-equation least squares on filtered data when Σ
    /// is diagonal, iterated feasible GLS (to convergence) otherwise.
    pub(crate) fn profile(
        &self,
        lambda: &[f64],
        phi: &[f64],
        full_cov: bool,
        with_gradient: bool,
        inner_tol: f64,
        inner_max_iter: usize,
    ) -> Result<ProfilePoint> {
        let m = self.design.n_equations();
        let p = self.design.n_regressors();
        let n = self.n_obs() as f64;
        if let Some(f) = phi.iter().find(|f| !(f.abs() < 1.0)) {
            return Err(Error::Domain(format!("serial coefficient {f} outside (-1, 1)")));
        }
        let spatial: Vec<SpatialTerm> = lambda
            .iter()
            .map(|&l| self.spatial_term(l, with_gradient))
            .collect::<Result<_>>()?;
        let logdet_sum: f64 = spatial.iter().map(|s| s.logdet).sum();
        let coef: Vec<[f64; 3]> = (0..m).map(|j| [1.0, -lambda[j], -phi[j]]).collect();

        let mut theta = DMatrix::zeros(p, m);
        for j in 0..m {
            let g = self.filtered_gram(coef[j], coef[j]);
            let rhs = self.filtered_cross(coef[j], coef[j], j);
            let chol = g
                .cholesky()
                .ok_or_else(|| Error::Domain("filtered design is not of full column rank".into()))?;
            theta.set_column(j, &chol.solve(&rhs));
        }
        let mut e = self.innovations(&theta, lambda, phi);
        let mut s = e.tr_mul(&e) / n;
        let mut iterations = 0;

        let sigma = if full_cov {
            let grams: Vec<Vec<DMatrix<f64>>> = (0..m)
                .map(|j| (0..m).map(|l| self.filtered_gram(coef[j], coef[l])).collect())
                .collect();
            let crosses: Vec<Vec<DVector<f64>>> = (0..m)
                .map(|j| (0..m).map(|l| self.filtered_cross(coef[j], coef[l], l)).collect())
                .collect();
            let mut best = (log_det_spd(&s)?, theta.clone(), e.clone(), s.clone());
            let mut prev = best.0;
            while iterations < inner_max_iter {
                iterations += 1;
                let prec = s
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Domain("residual covariance is singular".into()))?
                    .inverse();
                let mut big = DMatrix::zeros(m * p, m * p);
                let mut rhs = DVector::zeros(m * p);
                for j in 0..m {
                    for l in 0..m {
                        big.view_mut((j * p, l * p), (p, p))
                            .copy_from(&(&grams[j][l] * prec[(j, l)]));
                        let mut r = rhs.rows_mut(j * p, p);
                        r += &crosses[j][l] * prec[(j, l)];
                    }
                }
                let sol = big
                    .cholesky()
                    .ok_or_else(|| Error::Domain("GLS normal equations are singular".into()))?
                    .solve(&rhs);
                for j in 0..m {
                    theta.set_column(j, &sol.rows(j * p, p));
                }
                e = self.innovations(&theta, lambda, phi);
                s = e.tr_mul(&e) / n;
                let ld = log_det_spd(&s)?;
                if ld < best.0 {
                    best = (ld, theta.clone(), e.clone(), s.clone());
                }
                if (prev - ld).abs() <= inner_tol * (1.0 + ld.abs()) {
                    break;
                }
                prev = ld;
            }
            theta = best.1;
            e = best.2;
            best.3
        } else {
            DMatrix::from_diagonal(&s.diagonal())
        };

        let value = -0.5 * n * m as f64 * (LN_2PI + 1.0) - 0.5 * n * log_det_spd(&sigma)? + logdet_sum;

        let (mut grad_lambda, mut grad_phi) = (vec![0.0; m], vec![0.0; m]);
        if with_gradient {
            let prec = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("innovation covariance is singular".into()))?
                .inverse();
            let r = &e * prec;
            for j in 0..m {
                let (wu, lu) = self.lagged_residuals(&theta, j);
                grad_lambda[j] = spatial[j].dlogdet + r.column(j).dot(&wu);
                grad_phi[j] = r.column(j).dot(&lu);
            }
        }

        Ok(ProfilePoint {
            value,
            theta,
            sigma,
            innovations: e,
            grad_lambda,
            grad_phi,
            inner_iterations: iterations,
        })
    }

    /// Log-likelihood at explicit parameters.
    pub fn value(&self, theta: &DMatrix<f64>, err: &ErrorParams) -> Result<f64> {
        let m = self.design.n_equations();
        err.validate(m)?;
        if theta.shape() != (self.design.n_regressors(), m) {
            return Err(Error::Domain("coefficient matrix has the wrong shape".into()));
        }
        let chol = err
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("innovation covariance is not positive definite".into()))?;
        let logdet: f64 = err
            .lambda
            .iter()
            .map(|&l| self.spatial_term(l, false).map(|s| s.logdet))
            .sum::<Result<f64>>()?;
        let e = self.innovations(theta, &err.lambda, &err.phi);
        Ok(self.value_from_parts(&e, &chol.l(), logdet))
    }

    fn value_from_parts(&self, e: &DMatrix<f64>, chol_l: &DMatrix<f64>, logdet: f64) -> f64 {
        let n = self.n_obs() as f64;
        let m = e.ncols() as f64;
        let log_det_sigma: f64 = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let z = chol_l
            .solve_lower_triangular(&e.transpose())
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * n * m * LN_2PI - 0.5 * n * log_det_sigma + logdet - 0.5 * z.norm_squared()
    }

    pub(crate) fn spatial_terms(&self, lambda: &[f64], with_derivative: bool) -> Result<Vec<SpatialTerm>> {
        lambda
            .iter()
            .map(|&l| self.spatial_term(l, with_derivative))
            .collect()
    }

    /// Full log-likelihood at packed unconstrained coordinates.
    pub fn full_value(&self, x: &[f64], structure: ErrorStructure) -> Result<f64> {
        let params = self.unpack(x, structure);
        let terms = self.spatial_terms(&params.lambda, false)?;
        self.check_phi(&params.phi)?;
        let e = self.innovations(&params.theta, &params.lambda, &params.phi);
        Ok(self.value_from_parts(&e, &params.chol, terms.iter().map(|t| t.logdet).sum()))
    }

    /// Full log-likelihood and its gradient at packed coordinates.
    pub fn full_value_and_gradient(&self, x: &[f64], structure: ErrorStructure) -> Result<(f64, Vec<f64>)> {
        let params = self.unpack(x, structure);
        let terms = self.spatial_terms(&params.lambda, true)?;
        self.gradient_with_terms(&params, structure, &terms)
    }

    pub(crate) fn unpack(&self, x: &[f64], structure: ErrorStructure) -> FullParameters {
        FullParameters::unpack(
            x,
            self.design.n_regressors(),
            self.design.n_equations(),
            structure,
        )
    }

    fn check_phi(&self, phi: &[f64]) -> Result<()> {
        match phi.iter().find(|f| !(f.abs() < 1.0)) {
            Some(f) => Err(Error::Domain(format!("serial coefficient {f} outside (-1, 1)"))),
            None => Ok(()),
        }
    }

    pub(crate) fn gradient_with_terms(
        &self,
        params: &FullParameters,
        structure: ErrorStructure,
        terms: &[SpatialTerm],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_phi(&params.phi)?;
        let m = self.design.n_equations();
        let p = self.design.n_regressors();
        let n = self.n_obs() as f64;
        let e = self.innovations(&params.theta, &params.lambda, &params.phi);
        let value = self.value_from_parts(&e, &params.chol, terms.iter().map(|t| t.logdet).sum());

        let l = &params.chol;
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .ok_or_else(|| Error::Domain("Cholesky factor is singular".into()))?;
        let prec = l_inv.tr_mul(&l_inv);
        let r = &e * &prec;

        let mut grad = Vec::with_capacity(FullParameters::count(p, m, structure));
        for j in 0..m {
            let c = [1.0, -params.lambda[j], -params.phi[j]];
            let mut g = DVector::zeros(p);
            for a in 0..3 {
                if c[a] != 0.0 {
                    g += self.zx[a].tr_mul(&r.column(j)) * c[a];
                }
            }
            grad.extend(g.iter());
        }
        if structure.spatial() {
            for j in 0..m {
                let (wu, _) = self.lagged_residuals(&params.theta, j);
                let d = terms[j].dlogdet + r.column(j).dot(&wu);
                grad.push(d * (1.0 - params.lambda[j].powi(2)));
            }
        }
        if structure.serial() {
            for j in 0..m {
                let (_, lu) = self.lagged_residuals(&params.theta, j);
                grad.push(r.column(j).dot(&lu) * (1.0 - params.phi[j].powi(2)));
            }
        }
        let ete = e.tr_mul(&e);
        let g_sigma = &prec * (-0.5 * n) + &prec * &ete * &prec * 0.5;
        let d_l = &g_sigma * l * 2.0;
        for i in 0..m {
            if structure.full_covariance() {
                for k in 0..i {
                    grad.push(d_l[(i, k)]);
                }
            }
            grad.push(d_l[(i, i)] * l[(i, i)]);
        }
        Ok((value, grad))
    }
}

fn log_det_spd(s: &DMatrix<f64>) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("residual covariance is not positive definite (perfect fit?)".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Exact log-likelihood of the spatial-serial-SUR model at explicit parameters.
pub fn log_likelihood(
    theta: &DMatrix<f64>,
    err: &ErrorParams,
    design: &DesignMatrices,
    weights: &SpatialWeights,
) -> Result<f64> {
    Model::new(design, weights)?.value(theta, err)
}
