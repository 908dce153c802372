use nalgebra::DMatrix;
use serde::Serialize;

use super::design::DesignMatrices;
use super::likelihood::{FullParameters, Model, ProfilePoint};
use super::optim::{maximize, OptimSettings};
use super::stats::{p_value, stars};
use super::{ErrorStructure, ModelSpec};
use crate::error::{Error, Result};
use crate::indicators::SpatialWeights;
use crate::report::{serialize_matrix, serialize_option_f64s};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub optim: OptimSettings,
    /// Relative tolerance on ln det Σ̂ for the iterated GLS inner loop.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Relative central-difference step for the Hessian, per unconstrained coordinate.
    pub hessian_step: f64,
    /// Also start from one point away from (λ, φ) = 0.
    pub perturbed_start: bool,
    /// |λ| or |φ| beyond this is reported as a boundary solution.
    pub boundary: f64,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimSettings::default(),
            inner_tol: 1e-13,
            inner_max_iter: 1000,
            hessian_step: 1e-4,
            perturbed_start: true,
            boundary: 0.999,
            standard_errors: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    Converged,
    MaxIter,
    Boundary,
}

impl Convergence {
    pub fn as_str(self) -> &'static str {
        match self {
            Convergence::Converged => "converged",
            Convergence::MaxIter => "max-iter",
            Convergence::Boundary => "boundary",
        }
    }
}

/// One estimated parameter with its inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub equation: String,
    pub regressor: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

/// Goodness-of-fit figures added by [`super::fit_statistics`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitStatistics {
    pub r2: Vec<f64>,
    /// 1 − ΣSSR / ΣSST over equations.
    pub pooled_r2: f64,
    /// Simple mean of the per-equation R².
    pub mean_r2: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub residual_cov: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub residual_corr: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub equations: Vec<String>,
    pub regressors: Vec<String>,
    pub n_obs: usize,
    pub n_params: usize,
    /// Regression coefficients followed by λ and φ rows (when free).
    pub coefficients: Vec<Coefficient>,
    /// p × M.
    #[serde(serialize_with = "serialize_matrix")]
    pub theta: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(serialize_with = "serialize_option_f64s")]
    pub lambda_se: Vec<Option<f64>>,
    #[serde(serialize_with = "serialize_option_f64s")]
    pub phi_se: Vec<Option<f64>>,
    #[serde(serialize_with = "serialize_matrix")]
    pub sigma: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    /// Max-norm of the profile gradient on the unconstrained scale.
    pub gradient_norm: f64,
    pub convergence: Convergence,
    pub statistics: Option<FitStatistics>,
    /// n × M innovations at the estimate.
    #[serde(skip)]
    pub innovations: DMatrix<f64>,
    /// Inverse negative Hessian over the packed unconstrained parameters.
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl FitResult {
    pub fn coefficient(&self, equation: &str, regressor: &str) -> Option<&Coefficient> {
        self.coefficients
            .iter()
            .find(|c| c.equation == equation && c.regressor == regressor)
    }

    pub fn error_params(&self) -> super::ErrorParams {
        super::ErrorParams {
            lambda: self.lambda.clone(),
            phi: self.phi.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

struct Outer {
    lambda: Vec<f64>,
    phi: Vec<f64>,
    point: ProfilePoint,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

fn split(z: &[f64], m: usize, structure: ErrorStructure) -> (Vec<f64>, Vec<f64>) {
    let mut it = z.iter();
    let lambda = if structure.spatial() {
        it.by_ref().take(m).map(|v| v.tanh()).collect()
    } else {
        vec![0.0; m]
    };
    let phi = if structure.serial() {
        it.take(m).map(|v| v.tanh()).collect()
    } else {
        vec![0.0; m]
    };
    (lambda, phi)
}

fn join(lambda: &[f64], phi: &[f64], structure: ErrorStructure) -> Vec<f64> {
    let mut z = Vec::new();
    if structure.spatial() {
        z.extend(lambda.iter().map(|l| l.atanh()));
    }
    if structure.serial() {
        z.extend(phi.iter().map(|f| f.atanh()));
    }
    z
}

/// Maximizes the profile likelihood over the free (λ, φ) from every start
/// and keeps the best.
fn optimize_outer(
    model: &Model<'_>,
    structure: ErrorStructure,
    opts: &FitOptions,
    extra_starts: &[(Vec<f64>, Vec<f64>)],
) -> Result<Outer> {
    let m = model.design().n_equations();
    let full = structure.full_covariance();
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (lambda, phi) = split(z, m, structure);
        let pt = model.profile(&lambda, &phi, full, true, opts.inner_tol, opts.inner_max_iter)?;
        let mut g = Vec::with_capacity(z.len());
        if structure.spatial() {
            g.extend((0..m).map(|j| pt.grad_lambda[j] * (1.0 - lambda[j].powi(2))));
        }
        if structure.serial() {
            g.extend((0..m).map(|j| pt.grad_phi[j] * (1.0 - phi[j].powi(2))));
        }
        Ok((pt.value, g))
    };

    let mut starts: Vec<Vec<f64>> = vec![join(&vec![0.0; m], &vec![0.0; m], structure)];
    if opts.perturbed_start && (structure.spatial() || structure.serial()) {
        starts.push(join(&vec![0.1; m], &vec![0.5; m], structure));
    }
    for (l, f) in extra_starts {
        starts.push(join(l, f, structure));
    }

    let mut best: Option<(f64, Vec<f64>, usize, f64, bool)> = None;
    let mut total_iterations = 0;
    for z0 in &starts {
        let out = match maximize(objective, z0, &opts.optim) {
            Ok(o) => o,
            // A start outside the domain is skipped; the origin always works.
            Err(_) if z0.iter().any(|v| *v != 0.0) => continue,
            Err(e) => return Err(e),
        };
        total_iterations += out.iterations;
        let gnorm = out.gradient.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if best.as_ref().is_none_or(|b| out.value > b.0) {
            best = Some((out.value, out.x, out.iterations, gnorm, out.converged));
        }
    }
    let (_, z, _, gradient_norm, converged) =
        best.ok_or_else(|| Error::Domain("no feasible starting point".into()))?;
    let (lambda, phi) = split(&z, m, structure);
    let point = model.profile(&lambda, &phi, full, false, opts.inner_tol, opts.inner_max_iter)?;
    Ok(Outer {
        lambda,
        phi,
        point,
        iterations: total_iterations,
        gradient_norm,
        converged,
    })
}

/// Maximum-likelihood fit of one model variant.
///
/// θ and Σ are profiled out at each (λ, φ); restricted variants fix λ = 0,
/// φ = 0 and/or a diagonal Σ. The full model is also started from the
/// optima of the spatial-only and serial-only variants, so its likelihood
/// is never below theirs.
pub fn fit(
    design: &DesignMatrices,
    weights: &SpatialWeights,
    spec: ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    let model = Model::new(design, weights)?;
    fit_model(&model, spec, opts)
}

pub(crate) fn fit_model(model: &Model<'_>, spec: ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let design = model.design();
    let structure = spec.errors;
    let m = design.n_equations();
    let p = design.n_regressors();

    let mut extra = Vec::new();
    if structure == ErrorStructure::All {
        let sp = optimize_outer(model, ErrorStructure::Spatial, opts, &[])?;
        let se = optimize_outer(model, ErrorStructure::Serial, opts, &[])?;
        extra.push((sp.lambda.clone(), vec![0.0; m]));
        extra.push((vec![0.0; m], se.phi.clone()));
        extra.push((sp.lambda, se.phi));
    }
    let outer = optimize_outer(model, structure, opts, &extra)?;

    let mut convergence = if outer.converged
        && (outer.point.inner_iterations < opts.inner_max_iter || !structure.full_covariance())
    {
        Convergence::Converged
    } else {
        Convergence::MaxIter
    };
    if outer
        .lambda
        .iter()
        .chain(&outer.phi)
        .any(|v| v.abs() > opts.boundary)
    {
        convergence = Convergence::Boundary;
    }

    let pt = &outer.point;
    let chol = pt
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("estimated covariance is singular".into()))?
        .l();
    let params = FullParameters {
        theta: pt.theta.clone(),
        lambda: outer.lambda.clone(),
        phi: outer.phi.clone(),
        chol,
    };
    let covariance = if opts.standard_errors {
        Some(inverse_negative_hessian(model, &params, structure, opts.hessian_step)?)
    } else {
        None
    };
    let var = |k: usize| -> f64 {
        match &covariance {
            Some(c) if c[(k, k)] > 0.0 => c[(k, k)].sqrt(),
            _ => f64::NAN,
        }
    };

    let mut coefficients = Vec::new();
    for j in 0..m {
        for k in 0..p {
            let est = pt.theta[(k, j)];
            let se = var(j * p + k);
            coefficients.push(coefficient(&design.equations[j], &design.regressors[k], est, se));
        }
    }
    let mut offset = m * p;
    let mut lambda_se = vec![None; m];
    let mut phi_se = vec![None; m];
    if structure.spatial() {
        for j in 0..m {
            let l = outer.lambda[j];
            let se = var(offset + j) * (1.0 - l * l);
            lambda_se[j] = Some(se);
            coefficients.push(coefficient(&design.equations[j], "lambda", l, se));
        }
        offset += m;
    }
    if structure.serial() {
        for j in 0..m {
            let f = outer.phi[j];
            let se = var(offset + j) * (1.0 - f * f);
            phi_se[j] = Some(se);
            coefficients.push(coefficient(&design.equations[j], "phi", f, se));
        }
    }

    Ok(FitResult {
        spec,
        equations: design.equations.clone(),
        regressors: design.regressors.clone(),
        n_obs: design.n_obs(),
        n_params: FullParameters::count(p, m, structure),
        coefficients,
        theta: pt.theta.clone(),
        lambda: outer.lambda,
        phi: outer.phi,
        lambda_se,
        phi_se,
        sigma: pt.sigma.clone(),
        loglik: pt.value,
        iterations: outer.iterations,
        gradient_norm: outer.gradient_norm,
        convergence,
        statistics: None,
        innovations: pt.innovations.clone(),
        covariance,
    })
}

fn coefficient(equation: &str, regressor: &str, estimate: f64, std_error: f64) -> Coefficient {
    let p = p_value(estimate / std_error);
    Coefficient {
        equation: equation.to_string(),
        regressor: regressor.to_string(),
        estimate,
        std_error,
        p_value: p,
        stars: stars(p),
    }
}

/// Central differences of the analytic gradient of the full likelihood,
/// symmetrized and inverted.
fn inverse_negative_hessian(
    model: &Model<'_>,
    params: &FullParameters,
    structure: ErrorStructure,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let m = model.design().n_equations();
    let x = params.pack(structure);
    let k = x.len();
    let base_terms = model.spatial_terms(&params.lambda, true)?;

    let gradient_at = |xs: &[f64]| -> Result<Vec<f64>> {
        let pr = model.unpack(xs, structure);
        let mut terms = base_terms.clone();
        if structure.spatial() {
            for j in 0..m {
                if pr.lambda[j] != params.lambda[j] {
                    terms[j] = model.spatial_term(pr.lambda[j], true)?;
                }
            }
        }
        Ok(model.gradient_with_terms(&pr, structure, &terms)?.1)
    };

    let mut hess = DMatrix::zeros(k, k);
    for c in 0..k {
        let h = rel_step * x[c].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let gp = gradient_at(&xp)?;
        let gm = gradient_at(&xm)?;
        for r in 0..k {
            hess[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    let neg = -(&hess + hess.transpose()) * 0.5;
    if let Some(ch) = neg.clone().cholesky() {
        return Ok(ch.inverse());
    }
    neg.try_inverse()
        .ok_or_else(|| Error::Domain("information matrix is singular".into()))
}
