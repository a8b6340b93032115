//! Exponential-family regression with offsets, fitted by damped Newton.
//!
//! Used for every GLM nuisance fit and for the second-stage DINA likelihood.

use nalgebra::DMatrix;

use crate::error::{DinaError, Result};
use crate::model::{dot, log_lik_unchecked, mu_unchecked, variance_unchecked, Family, Matrix};
use crate::newton::{self, Derivatives, Objective, SolverOptions};

#[derive(Debug, Clone)]
pub struct GlmSpec {
    pub family: Family,
    pub design: Matrix,
    pub offset: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Fit rank-deficient designs with a tiny ridge instead of failing.
    pub ridge_fallback: bool,
}

impl GlmSpec {
    pub fn new(family: Family, design: Matrix) -> Self {
        let n = design.rows();
        Self { family, design, offset: vec![0.0; n], max_iter: 100, tol: 1e-8, ridge_fallback: false }
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_ridge_fallback(mut self, on: bool) -> Self {
        self.ridge_fallback = on;
        self
    }

    pub(crate) fn solver_options(&self) -> SolverOptions {
        SolverOptions { max_iter: self.max_iter, tol: self.tol, ..SolverOptions::default() }
    }
}

/// Solver settings shared by the GLM and Cox fitters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub solver: SolverOptions,
    pub ridge_fallback: bool,
}

impl FitOptions {
    pub fn with_ridge_fallback(mut self, on: bool) -> Self {
        self.ridge_fallback = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Mean log-likelihood (carrier term dropped) at `coef`.
    pub loglik: f64,
    pub ridge_used: bool,
    /// Mean log-likelihood after each accepted Newton iteration.
    pub trace: Vec<f64>,
}

impl From<newton::Solution> for GlmFit {
    fn from(s: newton::Solution) -> Self {
        GlmFit {
            coef: s.coef,
            converged: s.converged,
            iterations: s.iterations,
            final_gradient_norm: s.final_gradient_norm,
            loglik: s.value,
            ridge_used: s.ridge_used,
            trace: s.trace,
        }
    }
}

/// Accumulates `Σ w·x·xᵀ` into the upper triangle of `h` (row-major `p × p`).
#[inline]
pub(crate) fn add_outer(h: &mut [f64], x: &[f64], w: f64) {
    let p = x.len();
    for a in 0..p {
        let wa = w * x[a];
        let row = &mut h[a * p..(a + 1) * p];
        for b in a..p {
            row[b] += wa * x[b];
        }
    }
}

pub(crate) fn symmetrize(h: &mut [f64], p: usize) {
    for a in 0..p {
        for b in 0..a {
            h[a * p + b] = h[b * p + a];
        }
    }
}

/// Mean exponential-family log-likelihood `(1/n) Σ yη − ψ(η)`.
pub(crate) struct GlmObjective<'a> {
    pub family: &'a Family,
    pub design: &'a Matrix,
    pub offset: &'a [f64],
    pub y: &'a [f64],
}

impl Objective for GlmObjective<'_> {
    fn dim(&self) -> usize {
        self.design.cols()
    }

    fn value(&self, coef: &[f64]) -> f64 {
        let n = self.design.rows() as f64;
        self.design
            .iter_rows()
            .zip(self.offset)
            .zip(self.y)
            .map(|((r, o), y)| log_lik_unchecked(self.family, *y, o + dot(r, coef)))
            .sum::<f64>()
            / n
    }

    fn derivatives(&self, coef: &[f64]) -> Derivatives {
        let p = self.dim();
        let n = self.design.rows() as f64;
        let mut value = 0.0;
        let mut gradient = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for ((r, o), &y) in self.design.iter_rows().zip(self.offset).zip(self.y) {
            let eta = o + dot(r, coef);
            value += log_lik_unchecked(self.family, y, eta);
            let resid = y - mu_unchecked(self.family, eta);
            for (g, x) in gradient.iter_mut().zip(r) {
                *g += resid * x;
            }
            add_outer(&mut h, r, variance_unchecked(self.family, eta));
        }
        symmetrize(&mut h, p);
        gradient.iter_mut().for_each(|g| *g /= n);
        h.iter_mut().for_each(|v| *v /= n);
        Derivatives { value: value / n, gradient, neg_hessian: h }
    }
}

/// Numerical rank of a design from the singular values of its Gram matrix.
pub fn design_rank(design: &Matrix) -> usize {
    let p = design.cols();
    let mut h = vec![0.0; p * p];
    for r in design.iter_rows() {
        add_outer(&mut h, r, 1.0);
    }
    symmetrize(&mut h, p);
    let sv = DMatrix::from_row_slice(p, p, &h).singular_values();
    let max = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > 1e-12 * max).count()
}

fn starting_point(family: &Family, design: &Matrix, offset: &[f64], y: &[f64]) -> Vec<f64> {
    let p = design.cols();
    let mut init = vec![0.0; p];
    let has_intercept = design.iter_rows().all(|r| r[0] == 1.0);
    if has_intercept {
        let n = y.len() as f64;
        let ybar = y.iter().sum::<f64>() / n;
        let obar = offset.iter().sum::<f64>() / n;
        let link = match family {
            Family::Gaussian { .. } => Some(ybar),
            Family::Bernoulli if ybar > 0.0 && ybar < 1.0 => Some((ybar / (1.0 - ybar)).ln()),
            Family::Poisson if ybar > 0.0 => Some(ybar.ln()),
            _ => None,
        };
        if let Some(l) = link {
            init[0] = l - obar;
        }
    }
    init
}

pub(crate) fn check_rank(design: &Matrix, ridge_fallback: bool) -> Result<()> {
    if ridge_fallback {
        return Ok(());
    }
    let rank = design_rank(design);
    if rank < design.cols() {
        return Err(DinaError::RankDeficient { rank, cols: design.cols() });
    }
    Ok(())
}

/// Maximizes `Σ yᵢηᵢ − ψ(ηᵢ)` with `ηᵢ = offsetᵢ + rowᵢ·coef`.
pub fn fit_glm(spec: &GlmSpec, y: &[f64]) -> Result<GlmFit> {
    let n = spec.design.rows();
    if spec.family.is_cox() {
        return Err(DinaError::UnsupportedFamily {
            family: spec.family.name().into(),
            reason: "fit_glm handles exponential families; use the cox module".into(),
        });
    }
    if y.len() != n || spec.offset.len() != n {
        return Err(DinaError::DimensionMismatch(format!(
            "design has {n} rows, y {}, offset {}",
            y.len(),
            spec.offset.len()
        )));
    }
    if !(spec.tol > 0.0) {
        return Err(DinaError::InvalidArgument("tol must be positive".into()));
    }
    if let Some(i) = y.iter().position(|&v| !spec.family.validate_response(v)) {
        return Err(DinaError::InvalidResponse { row: i, value: y[i], family: spec.family.name().into() });
    }
    check_rank(&spec.design, spec.ridge_fallback)?;
    let obj = GlmObjective { family: &spec.family, design: &spec.design, offset: &spec.offset, y };
    let init = starting_point(&spec.family, &spec.design, &spec.offset, y);
    let sol = newton::maximize(&obj, init, &spec.solver_options())?;
    Ok(sol.into())
}

/// `ηᵢ = offsetᵢ + rowᵢ·coef`
pub fn predict_eta(fit: &GlmFit, design: &Matrix, offset: &[f64]) -> Result<Vec<f64>> {
    if design.cols() != fit.coef.len() {
        return Err(DinaError::DimensionMismatch(format!(
            "design has {} columns, fit has {} coefficients",
            design.cols(),
            fit.coef.len()
        )));
    }
    if offset.len() != design.rows() {
        return Err(DinaError::DimensionMismatch(format!(
            "offset has {} entries for {} rows",
            offset.len(),
            design.rows()
        )));
    }
    Ok(design.iter_rows().zip(offset).map(|(r, o)| o + dot(r, &fit.coef)).collect())
}
