//! Domain types and exponential-family primitives.
//!
//! Log-likelihoods here drop the carrier term `log κ(y)`: every optimizer in
//! the crate compares likelihoods at fixed responses only.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::error::{DinaError, Result};

/// Dense row-major matrix. Rows are units, columns covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// The covariate matrix of a dataset.
pub type CovariateMatrix = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DinaError::InvalidArgument(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(DinaError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DinaError::InvalidArgument(format!(
                "non-finite entry at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DinaError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Unvalidated constructor for internally produced data.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(idx.len(), self.cols, data)
    }

    /// Prepends a column of ones.
    pub fn with_intercept(&self) -> Matrix {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in self.iter_rows() {
            data.push(1.0);
            data.extend_from_slice(r);
        }
        Matrix::from_raw(self.rows, cols, data)
    }

    /// Scales each row `i` by `scale[i]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Matrix {
        let mut data = self.data.clone();
        for (chunk, s) in data.chunks_exact_mut(self.cols).zip(scale) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        Matrix::from_raw(self.rows, self.cols, data)
    }

    /// `self · coef`
    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, coef)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A cumulative hazard supplied by the caller.
pub trait CumulativeHazard: Send + Sync + fmt::Debug {
    fn cum_hazard(&self, y: f64) -> f64;
    fn hazard(&self, y: f64) -> f64;
    /// Analytic inverse of the cumulative hazard, when one exists.
    fn inverse(&self, _value: f64) -> Option<f64> {
        None
    }
}

/// Baseline cumulative hazard `Λ` with `Λ(0) = 0`, nondecreasing.
#[derive(Debug, Clone)]
pub enum BaselineHazard {
    /// `Λ(y) = scale · y^shape`, the Weibull family.
    Power { scale: f64, shape: f64 },
    Custom(Arc<dyn CumulativeHazard>),
}

impl BaselineHazard {
    pub fn power(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()) {
            return Err(DinaError::InvalidArgument(format!(
                "power hazard needs positive scale and shape, got ({scale}, {shape})"
            )));
        }
        Ok(BaselineHazard::Power { scale, shape })
    }

    /// `λ(y) = y`, i.e. `Λ(y) = y²/2`.
    pub fn linear_hazard() -> Self {
        BaselineHazard::Power { scale: 0.5, shape: 2.0 }
    }

    pub fn cum_hazard(&self, y: f64) -> f64 {
        match self {
            BaselineHazard::Power { scale, shape } => {
                if y <= 0.0 {
                    0.0
                } else {
                    scale * y.powf(*shape)
                }
            }
            BaselineHazard::Custom(h) => h.cum_hazard(y.max(0.0)),
        }
    }

    pub fn hazard(&self, y: f64) -> f64 {
        match self {
            BaselineHazard::Power { scale, shape } => {
                if y <= 0.0 {
                    if *shape < 1.0 {
                        f64::INFINITY
                    } else if *shape == 1.0 {
                        *scale
                    } else {
                        0.0
                    }
                } else {
                    scale * shape * y.powf(shape - 1.0)
                }
            }
            BaselineHazard::Custom(h) => h.hazard(y),
        }
    }

    /// Smallest `y` with `Λ(y) ≥ value`.
    pub fn inverse(&self, value: f64) -> f64 {
        if value <= 0.0 {
            return 0.0;
        }
        match self {
            BaselineHazard::Power { scale, shape } => (value / scale).powf(1.0 / shape),
            BaselineHazard::Custom(h) => h.inverse(value).unwrap_or_else(|| self.bisect_inverse(value)),
        }
    }

    fn bisect_inverse(&self, value: f64) -> f64 {
        let mut hi = 1.0;
        while self.cum_hazard(hi) < value {
            hi *= 2.0;
            if !hi.is_finite() {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cum_hazard(mid) < value {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1e-300) {
                break;
            }
        }
        hi
    }

    pub fn describe(&self) -> String {
        match self {
            BaselineHazard::Power { scale, shape } => format!("power:{scale}:{shape}"),
            BaselineHazard::Custom(h) => format!("custom:{h:?}"),
        }
    }
}

/// Response family.
#[derive(Debug, Clone)]
pub enum Family {
    Gaussian { dispersion: f64 },
    Bernoulli,
    Poisson,
    /// Cox model with known baseline hazard (full likelihood).
    CoxFull(BaselineHazard),
    /// Cox model estimated through the partial likelihood.
    CoxPartial,
}

impl std::str::FromStr for Family {
    type Err = DinaError;

    fn from_str(s: &str) -> Result<Self> {
        Family::parse(s)
    }
}

impl Family {
    pub fn gaussian() -> Self {
        Family::Gaussian { dispersion: 1.0 }
    }

    pub fn gaussian_with(dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(DinaError::InvalidArgument(format!(
                "gaussian dispersion must be positive, got {dispersion}"
            )));
        }
        Ok(Family::Gaussian { dispersion })
    }

    pub fn is_cox(&self) -> bool {
        matches!(self, Family::CoxFull(_) | Family::CoxPartial)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::CoxFull(_) => "cox-full",
            Family::CoxPartial => "cox-partial",
        }
    }

    /// Parses `gaussian[:σ²]`, `bernoulli`, `poisson`, `cox-partial` and
    /// `cox-full[:power:<scale>:<shape>]` (default baseline `λ(y) = y`).
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| DinaError::Config(format!("bad number `{p}` in family `{s}`")))
        };
        match parts.as_slice() {
            ["gaussian"] => Ok(Family::gaussian()),
            ["gaussian", d] => Family::gaussian_with(num(d)?),
            ["bernoulli"] => Ok(Family::Bernoulli),
            ["poisson"] => Ok(Family::Poisson),
            ["cox-partial"] => Ok(Family::CoxPartial),
            ["cox-full"] => Ok(Family::CoxFull(BaselineHazard::linear_hazard())),
            ["cox-full", "power", a, k] => Ok(Family::CoxFull(BaselineHazard::power(num(a)?, num(k)?)?)),
            _ => Err(DinaError::Config(format!("unknown family `{s}`"))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Family::Gaussian { dispersion } => format!("gaussian:{dispersion}"),
            Family::CoxFull(b) => format!("cox-full:{}", b.describe()),
            other => other.name().to_string(),
        }
    }

    pub fn baseline(&self) -> Option<&BaselineHazard> {
        match self {
            Family::CoxFull(b) => Some(b),
            _ => None,
        }
    }

    fn reject_cox(&self, op: &str) -> Result<()> {
        if self.is_cox() {
            Err(DinaError::UnsupportedFamily {
                family: self.name().into(),
                reason: format!("{op} is only defined for exponential families"),
            })
        } else {
            Ok(())
        }
    }

    /// Checks a response value for this family.
    pub fn validate_response(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            Family::Gaussian { .. } => true,
            Family::Bernoulli => y == 0.0 || y == 1.0,
            Family::Poisson => y >= 0.0 && y.fract() == 0.0,
            Family::CoxFull(_) | Family::CoxPartial => y >= 0.0,
        }
    }
}

/// `log(1 + e^η)` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    if eta > 30.0 {
        eta + (-eta).exp().ln_1p()
    } else if eta < -30.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Cumulant function `ψ(η)`. The Gaussian dispersion only enters sampling
/// and [`response_variance`]; `ψ(η) = η²/2` keeps `μ = ψ′` and `V = ψ″`.
pub fn psi(family: &Family, eta: f64) -> Result<f64> {
    family.reject_cox("psi")?;
    Ok(psi_unchecked(family, eta))
}

#[inline]
pub(crate) fn psi_unchecked(family: &Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian { .. } => 0.5 * eta * eta,
        Family::Bernoulli => softplus(eta),
        Family::Poisson => eta.exp(),
        _ => f64::NAN,
    }
}

/// Mean function `μ = ψ′(η)`.
pub fn mu(family: &Family, eta: f64) -> Result<f64> {
    family.reject_cox("mu")?;
    Ok(mu_unchecked(family, eta))
}

#[inline]
pub(crate) fn mu_unchecked(family: &Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian { .. } => eta,
        Family::Bernoulli => sigmoid(eta),
        Family::Poisson => eta.exp(),
        _ => f64::NAN,
    }
}

/// Variance function `V = dμ/dη = ψ″(η)`.
pub fn variance(family: &Family, eta: f64) -> Result<f64> {
    family.reject_cox("variance")?;
    Ok(variance_unchecked(family, eta))
}

#[inline]
pub(crate) fn variance_unchecked(family: &Family, eta: f64) -> f64 {
    match family {
        Family::Gaussian { .. } => 1.0,
        Family::Bernoulli => {
            let e = (-eta.abs()).exp();
            e / ((1.0 + e) * (1.0 + e))
        }
        Family::Poisson => eta.exp(),
        _ => f64::NAN,
    }
}

/// `yη − ψ(η)`.
pub fn log_lik(family: &Family, y: f64, eta: f64) -> Result<f64> {
    family.reject_cox("log_lik")?;
    if !family.validate_response(y) {
        return Err(DinaError::InvalidResponse { row: 0, value: y, family: family.name().into() });
    }
    Ok(log_lik_unchecked(family, y, eta))
}

#[inline]
pub(crate) fn log_lik_unchecked(family: &Family, y: f64, eta: f64) -> f64 {
    y * eta - psi_unchecked(family, eta)
}

/// `Var(Y)` at natural parameter `eta`: `σ²` for the Gaussian, `ψ″(η)` otherwise.
pub fn response_variance(family: &Family, eta: f64) -> Result<f64> {
    family.reject_cox("response_variance")?;
    Ok(match family {
        Family::Gaussian { dispersion } => *dispersion,
        _ => variance_unchecked(family, eta),
    })
}

/// Draws a response at natural parameter `eta`. Cox families draw the
/// (uncensored) event time through the inverse cumulative hazard.
pub fn sample<R: Rng + ?Sized>(family: &Family, eta: f64, rng: &mut R) -> Result<f64> {
    match family {
        Family::Gaussian { dispersion } => {
            let z: f64 = StandardNormal.sample(rng);
            Ok(eta + dispersion.sqrt() * z)
        }
        Family::Bernoulli => Ok(if rng.gen::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 }),
        Family::Poisson => {
            let lambda = eta.exp();
            if lambda < 1e-12 {
                // P(Y > 0) < 1e-12
                return Ok(0.0);
            }
            let dist = Poisson::new(lambda)
                .map_err(|e| DinaError::InvalidArgument(format!("poisson rate {lambda}: {e}")))?;
            Ok(dist.sample(rng))
        }
        Family::CoxFull(baseline) => {
            let e: f64 = Exp1.sample(rng);
            Ok(baseline.inverse(e * (-eta).exp()))
        }
        Family::CoxPartial => Err(DinaError::UnsupportedFamily {
            family: "cox-partial".into(),
            reason: "sampling needs a baseline hazard; use cox-full".into(),
        }),
    }
}

/// One observed unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRow<'a> {
    pub x: &'a [f64],
    pub w: usize,
    pub y: f64,
    pub delta: Option<u8>,
}

/// Observed data tagged with a response family.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub family: Family,
    pub x: Matrix,
    pub w: Vec<usize>,
    pub y: Vec<f64>,
    pub delta: Option<Vec<u8>>,
    pub n_arms: usize,
}

impl Dataset {
    pub fn new(
        family: Family,
        x: Matrix,
        w: Vec<usize>,
        y: Vec<f64>,
        delta: Option<Vec<u8>>,
        n_arms: usize,
    ) -> Result<Self> {
        let n = x.rows();
        if w.len() != n || y.len() != n {
            return Err(DinaError::DimensionMismatch(format!(
                "x has {n} rows, w {}, y {}",
                w.len(),
                y.len()
            )));
        }
        if n_arms < 2 {
            return Err(DinaError::InvalidArgument("need at least two arms".into()));
        }
        if let Some(i) = w.iter().position(|&a| a >= n_arms) {
            return Err(DinaError::InvalidArgument(format!(
                "row {i}: arm {} >= n_arms {n_arms}",
                w[i]
            )));
        }
        match (&delta, family.is_cox()) {
            (None, true) => return Err(DinaError::MissingColumn("delta".into())),
            (Some(_), false) => {
                return Err(DinaError::InvalidArgument(format!(
                    "censoring indicator given for non-Cox family {}",
                    family.name()
                )))
            }
            (Some(d), true) => {
                if d.len() != n {
                    return Err(DinaError::DimensionMismatch(format!("delta has {} rows", d.len())));
                }
                if let Some(i) = d.iter().position(|&v| v > 1) {
                    return Err(DinaError::InvalidArgument(format!("row {i}: delta must be 0 or 1")));
                }
            }
            (None, false) => {}
        }
        if let Some(i) = y.iter().position(|&v| !family.validate_response(v)) {
            return Err(DinaError::InvalidResponse { row: i, value: y[i], family: family.name().into() });
        }
        Ok(Self { family, x, w, y, delta, n_arms })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn row(&self, i: usize) -> ObservedRow<'_> {
        ObservedRow {
            x: self.x.row(i),
            w: self.w[i],
            y: self.y[i],
            delta: self.delta.as_ref().map(|d| d[i]),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            family: self.family.clone(),
            x: self.x.select_rows(idx),
            w: idx.iter().map(|&i| self.w[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            delta: self.delta.as_ref().map(|d| idx.iter().map(|&i| d[i]).collect()),
            n_arms: self.n_arms,
        }
    }

    /// Same data, different family tag (e.g. `CoxFull` → `CoxPartial`).
    pub fn with_family(&self, family: Family) -> Result<Dataset> {
        Dataset::new(family, self.x.clone(), self.w.clone(), self.y.clone(), self.delta.clone(), self.n_arms)
    }

    pub fn arm_indices(&self, arm: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.w[i] == arm).collect()
    }

    pub fn censored_fraction(&self) -> Option<f64> {
        self.delta
            .as_ref()
            .map(|d| d.iter().filter(|&&v| v == 0).count() as f64 / d.len() as f64)
    }

    pub fn delta_f64(&self) -> Option<Vec<f64>> {
        self.delta.as_ref().map(|d| d.iter().map(|&v| f64::from(v)).collect())
    }
}
