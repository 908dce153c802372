//! BFGS ascent with backtracking line search.
//!
//! Only strict improvements are accepted, so the returned value is never
//! below the starting value. Objective evaluations that fail (parameters
//! outside the model's domain) are treated as rejected steps.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSettings {
    pub max_iter: usize,
    /// Stop when the last accepted improvement is below this...
    pub f_tol: f64,
    /// ...and the gradient max-norm is below this.
    pub g_tol: f64,
    /// Largest coordinate change per step.
    pub max_step: f64,
    /// Coordinates are kept within ±bound.
    pub bound: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            max_iter: 500,
            f_tol: 1e-8,
            g_tol: 1e-5,
            max_step: 1.0,
            bound: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f`, which returns the value and gradient at a point.
pub fn maximize<F>(mut f: F, x0: &[f64], settings: &OptimSettings) -> Result<OptimOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if n == 0 {
        return Ok(OptimOutcome {
            x,
            value: fx,
            gradient: g,
            iterations: 0,
            converged: true,
        });
    }
    // Inverse-Hessian approximation of -f, row-major.
    let mut h = identity(n);
    let mut last_gain = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iter {
        let gnorm = max_norm(&g);
        if gnorm < settings.g_tol && last_gain < settings.f_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = mat_vec(&h, &g);
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            h = identity(n);
            d = g.clone();
            slope = dot(&g, &d);
        }
        let dmax = max_norm(&d);
        if dmax > settings.max_step {
            let s = settings.max_step / dmax;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| (xi + alpha * di).clamp(-settings.bound, settings.bound))
                .collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft > fx && ft >= fx + 1e-4 * alpha * slope.min(f64::MAX) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            // No ascent possible along the search direction: at the
            // attainable precision of the objective.
            if gnorm < settings.g_tol {
                converged = true;
            } else if h != identity(n) {
                h = identity(n);
                continue;
            }
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Gradient difference of the minimized function -f.
        let yv: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            bfgs_update(&mut h, &s, &yv, sy);
        }
        last_gain = f_new - fx;
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    if !converged && max_norm(&g) < settings.g_tol && last_gain < settings.f_tol {
        converged = true;
    }
    Ok(OptimOutcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect()
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        let target = [0.3, -1.2, 2.0];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = -x.iter().zip(&target).enumerate().map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2)).sum::<f64>();
            let g = x
                .iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| -2.0 * (i as f64 + 1.0) * (a - b))
                .collect();
            Ok((v, g))
        };
        let out = maximize(f, &[0.0; 3], &OptimSettings::default()).unwrap();
        assert!(out.converged);
        for (a, b) in out.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![
                2.0 * (1.0 - a) + 400.0 * a * (b - a * a),
                -200.0 * (b - a * a),
            ];
            Ok((v, g))
        };
        let out = maximize(f, &[-1.2, 1.0], &OptimSettings { max_iter: 2000, ..Default::default() }).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn never_decreases_and_handles_empty() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((3.0, vec![])) };
        let out = maximize(f, &[], &OptimSettings::default()).unwrap();
        assert_eq!(out.value, 3.0);
        assert!(out.converged);

        // Objective failing away from the start never moves the iterate.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] != 0.0 {
                Err(crate::error::Error::Domain("outside".into()))
            } else {
                Ok((1.0, vec![1.0]))
            }
        };
        let out = maximize(f, &[0.0], &OptimSettings::default()).unwrap();
        assert_eq!(out.x, vec![0.0]);
        assert!(!out.converged);
    }
}
