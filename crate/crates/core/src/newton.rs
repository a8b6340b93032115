//! Damped Newton ascent for smooth concave objectives.
//!
//! Each iteration solves `H·step = g` (with `H` the negative Hessian), then
//! halves the step until the objective does not decrease. A fully accepted
//! step is extended by doubling while the objective keeps rising, which sends
//! unbounded problems (separation) past the coefficient cap in a handful of
//! iterations instead of creeping towards it.

use nalgebra::{DMatrix, DVector};

use crate::error::{DinaError, Result};

/// Value, gradient and negative Hessian (row-major, `dim × dim`).
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub neg_hessian: Vec<f64>,
}

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, coef: &[f64]) -> f64;
    fn derivatives(&self, coef: &[f64]) -> Derivatives;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Tolerance on the max-norm of the gradient.
    pub tol: f64,
    /// Max-norm of the coefficients beyond which the problem is declared unbounded.
    pub coef_cap: f64,
    pub ridge: f64,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, coef_cap: 1e3, ridge: 1e-8, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub value: f64,
    pub ridge_used: bool,
    /// Objective value after every accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

const STEP_TOL: f64 = 1e-4;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `H·x = g`, adding `ridge·I` if `H` is not positive definite.
fn newton_direction(h: &[f64], g: &[f64], ridge: f64) -> Option<(Vec<f64>, bool)> {
    let p = g.len();
    let hm = DMatrix::from_row_slice(p, p, h);
    let gv = DVector::from_column_slice(g);
    if let Some(ch) = hm.clone().cholesky() {
        if well_conditioned(ch.l_dirty(), p) {
            let x = ch.solve(&gv);
            if x.iter().all(|v| v.is_finite()) {
                return Some((x.iter().copied().collect(), false));
            }
        }
    }
    let scale = (0..p).map(|i| h[i * p + i].abs()).fold(0.0_f64, f64::max).max(1.0);
    let mut shift = ridge * scale;
    for _ in 0..12 {
        let mut hr = hm.clone();
        for i in 0..p {
            hr[(i, i)] += shift;
        }
        if let Some(ch) = hr.cholesky() {
            let x = ch.solve(&gv);
            if x.iter().all(|v| v.is_finite()) {
                return Some((x.iter().copied().collect(), true));
            }
        }
        shift *= 100.0;
    }
    None
}

/// Rejects factors whose pivots span more than 1e12 in squared magnitude.
fn well_conditioned(l: &DMatrix<f64>, p: usize) -> bool {
    let diag: Vec<f64> = (0..p).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let max = diag.iter().fold(0.0_f64, |m, v| m.max(*v));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    max > 0.0 && min > 1e-12 * max
}

/// A stationary point reached through vanishing curvature (the likelihood
/// flattening towards a supremum at infinity) is still unbounded: probe far
/// along the last displacement.
fn unbounded_along<O: Objective>(obj: &O, coef: &[f64], prev: &[f64], value: f64, cap: f64) -> Result<()> {
    let dir: Vec<f64> = coef.iter().zip(prev).map(|(c, p)| c - p).collect();
    let len = max_norm(&dir);
    if len == 0.0 {
        return Ok(());
    }
    let t = 2.0 * cap / len;
    let probe: Vec<f64> = coef.iter().zip(&dir).map(|(c, v)| c + t * v).collect();
    let far = obj.value(&probe);
    if far.is_finite() && far >= value - 1e-12 * value.abs().max(1.0) {
        return Err(DinaError::Separation { norm: max_norm(&probe) });
    }
    Ok(())
}

fn improves(new: f64, old: f64) -> bool {
    new.is_finite() && new >= old - 1e-14 * old.abs().max(1.0)
}

pub fn maximize<O: Objective>(obj: &O, init: Vec<f64>, opts: &SolverOptions) -> Result<Solution> {
    let p = obj.dim();
    debug_assert_eq!(init.len(), p);
    let mut coef = init;
    let mut ridge_used = false;
    let mut trace = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    let mut d = obj.derivatives(&coef);
    if !d.value.is_finite() {
        return Err(DinaError::InvalidArgument("objective is not finite at the starting point".into()));
    }
    trace.push(d.value);
    for iter in 0..opts.max_iter {
        let gnorm = max_norm(&d.gradient);
        let (step, ridged) = newton_direction(&d.neg_hessian, &d.gradient, opts.ridge).ok_or(
            DinaError::NoConvergence { iterations: iter, gradient_norm: gnorm },
        )?;
        ridge_used |= ridged;
        if gnorm <= opts.tol && max_norm(&step) <= STEP_TOL {
            if let Some(prev) = &previous {
                unbounded_along(obj, &coef, prev, d.value, opts.coef_cap)?;
            }
            return Ok(Solution {
                coef,
                converged: true,
                iterations: iter,
                final_gradient_norm: gnorm,
                value: d.value,
                ridge_used,
                trace,
            });
        }

        let at = |t: f64| -> Vec<f64> { coef.iter().zip(&step).map(|(c, s)| c + t * s).collect() };
        let mut t = 1.0;
        let mut candidate = at(t);
        let mut value = obj.value(&candidate);
        let mut halvings = 0;
        while !improves(value, d.value) {
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(DinaError::NoConvergence { iterations: iter, gradient_norm: gnorm });
            }
            t *= 0.5;
            candidate = at(t);
            value = obj.value(&candidate);
        }
        if halvings == 0 && max_norm(&step) > STEP_TOL {
            while t < 1024.0 {
                let next = at(2.0 * t);
                let v = obj.value(&next);
                if v.is_finite() && v > value {
                    t *= 2.0;
                    candidate = next;
                    value = v;
                } else {
                    break;
                }
            }
        }
        previous = Some(std::mem::replace(&mut coef, candidate));
        let norm = max_norm(&coef);
        if norm > opts.coef_cap {
            return Err(DinaError::Separation { norm });
        }
        d = obj.derivatives(&coef);
        trace.push(d.value);
    }
    let gnorm = max_norm(&d.gradient);
    Err(DinaError::NoConvergence { iterations: opts.max_iter, gradient_norm: gnorm })
}
