//! Nuisance learners: GLMs, gradient boosting and propensity models.

pub mod boost;

use std::fmt;
use std::sync::Arc;

pub use boost::{fit_boost, BoostModel, BoostParams};

use crate::cox::{fit_cox_full, fit_cox_partial, CoxDesign};
use crate::error::{DinaError, Result};
use crate::glm::{add_outer, fit_glm, symmetrize, FitOptions, GlmSpec};
use crate::model::{dot, sigmoid, Dataset, Family, Matrix};
use crate::newton::{self, Derivatives, Objective, SolverOptions};

pub const PROPENSITY_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LearnerSpec {
    #[default]
    Glm,
    Boost(BoostParams),
}

impl std::str::FromStr for LearnerSpec {
    type Err = DinaError;

    fn from_str(s: &str) -> Result<Self> {
        LearnerSpec::parse(s)
    }
}

impl LearnerSpec {
    pub fn boost() -> Self {
        LearnerSpec::Boost(BoostParams::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Glm => Ok(()),
            LearnerSpec::Boost(p) => p.validate(),
        }
    }

    /// Parses `glm`, `boost` or `boost:<trees>:<rate>:<depth>`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["glm"] => LearnerSpec::Glm,
            ["boost"] => LearnerSpec::boost(),
            ["boost", t, r, d] => {
                let bad = |p: &str| DinaError::Config(format!("bad value `{p}` in learner `{s}`"));
                LearnerSpec::Boost(BoostParams {
                    n_trees: t.parse().map_err(|_| bad(t))?,
                    learning_rate: r.parse().map_err(|_| bad(r))?,
                    max_depth: d.parse().map_err(|_| bad(d))?,
                })
            }
            _ => return Err(DinaError::Config(format!("unknown learner `{s}`"))),
        };
        spec.validate().map_err(|e| DinaError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn describe(&self) -> String {
        match self {
            LearnerSpec::Glm => "glm".into(),
            LearnerSpec::Boost(p) => format!("boost:{}:{}:{}", p.n_trees, p.learning_rate, p.max_depth),
        }
    }
}

pub type RealFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A fitted function of the covariates on the natural-parameter scale.
#[derive(Clone)]
pub enum FittedFunction {
    Constant(f64),
    /// `coef[0] + x·coef[1..]`
    Linear(Vec<f64>),
    Boosted(Arc<BoostModel>),
    Custom(RealFn),
}

impl fmt::Debug for FittedFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FittedFunction::Constant(c) => write!(f, "Constant({c})"),
            FittedFunction::Linear(c) => write!(f, "Linear({c:?})"),
            FittedFunction::Boosted(m) => write!(f, "Boosted({} trees)", m.trees.len()),
            FittedFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl FittedFunction {
    pub fn custom<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        FittedFunction::Custom(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FittedFunction::Constant(c) => *c,
            FittedFunction::Linear(c) => c[0] + dot(&c[1..], x),
            FittedFunction::Boosted(m) => m.predict(x),
            FittedFunction::Custom(f) => f(x),
        }
    }

    pub fn eval_rows(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.eval(r)).collect()
    }
}

fn clamped_log_cum_hazard(family: &Family, times: &[f64]) -> Vec<f64> {
    let b = family.baseline().expect("cox-full family carries a baseline");
    times.iter().map(|&t| b.cum_hazard(t).max(1e-300).ln()).collect()
}

/// Fits `η(x)` for one population of rows.
///
/// Cox families take censored times in `y` and events in `delta`; the
/// partial likelihood leaves the level of `η` unidentified and returns a
/// function with zero intercept.
pub fn fit_learner(
    spec: &LearnerSpec,
    family: &Family,
    x: &Matrix,
    y: &[f64],
    delta: Option<&[u8]>,
    offset: Option<&[f64]>,
) -> Result<FittedFunction> {
    fit_learner_with(spec, family, x, y, delta, offset, &FitOptions::default())
}

/// [`fit_learner`] with explicit solver settings for the GLM routes.
pub fn fit_learner_with(
    spec: &LearnerSpec,
    family: &Family,
    x: &Matrix,
    y: &[f64],
    delta: Option<&[u8]>,
    offset: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FittedFunction> {
    spec.validate()?;
    let n = x.rows();
    let zeros;
    let offset = match offset {
        Some(o) => o,
        None => {
            zeros = vec![0.0; n];
            &zeros
        }
    };
    let events = || {
        delta.ok_or_else(|| DinaError::MissingColumn("delta".into()))
    };
    match (family, spec) {
        (Family::CoxFull(b), LearnerSpec::Glm) => {
            let design = CoxDesign::new(x.with_intercept(), offset.to_vec(), y.to_vec(), events()?.to_vec())?;
            Ok(FittedFunction::Linear(fit_cox_full(&design, b, opts)?.coef))
        }
        (Family::CoxFull(_), LearnerSpec::Boost(p)) => {
            // full likelihood = Poisson likelihood of Δ with offset log Λ(Y)
            let d: Vec<f64> = events()?.iter().map(|&v| f64::from(v)).collect();
            let off: Vec<f64> =
                clamped_log_cum_hazard(family, y).iter().zip(offset).map(|(a, b)| a + b).collect();
            Ok(FittedFunction::Boosted(Arc::new(fit_boost(p, &Family::Poisson, x, &d, &off)?)))
        }
        (Family::CoxPartial, _) => {
            let design = CoxDesign::new(x.clone(), offset.to_vec(), y.to_vec(), events()?.to_vec())?;
            let fit = fit_cox_partial(&design, opts)?;
            let mut coef = vec![0.0];
            coef.extend(fit.coef);
            Ok(FittedFunction::Linear(coef))
        }
        (_, LearnerSpec::Glm) => {
            let mut spec = GlmSpec::new(family.clone(), x.with_intercept())
                .with_offset(offset.to_vec())
                .with_ridge_fallback(opts.ridge_fallback);
            spec.max_iter = opts.solver.max_iter;
            spec.tol = opts.solver.tol;
            Ok(FittedFunction::Linear(fit_glm(&spec, y)?.coef))
        }
        (_, LearnerSpec::Boost(p)) => Ok(FittedFunction::Boosted(Arc::new(fit_boost(p, family, x, y, offset)?))),
    }
}

/// Fits `η̂_w` for every arm.
///
/// Exponential families and the full Cox likelihood fit each arm separately.
/// The partial likelihood cannot identify arm-specific levels from separate
/// fits, so all arms are fitted jointly with arm indicators and interactions;
/// the boosting learner falls back to this GLM there.
pub fn fit_arm_outcomes(spec: &LearnerSpec, data: &Dataset) -> Result<Vec<FittedFunction>> {
    let k = data.n_arms;
    for arm in 0..k {
        if !data.w.contains(&arm) {
            return Err(DinaError::EmptyArm { arm });
        }
    }
    if let Family::CoxPartial = data.family {
        return fit_partial_joint(data);
    }
    (0..k)
        .map(|arm| {
            let idx = data.arm_indices(arm);
            let sub = data.subset(&idx);
            fit_learner(spec, &data.family, &sub.x, &sub.y, sub.delta.as_deref(), None)
        })
        .collect()
}

fn fit_partial_joint(data: &Dataset) -> Result<Vec<FittedFunction>> {
    let k = data.n_arms;
    let d = data.d();
    let cols = d + (k - 1) * (d + 1);
    let mut rows = Vec::with_capacity(data.n() * cols);
    for i in 0..data.n() {
        let x = data.x.row(i);
        rows.extend_from_slice(x);
        for t in 1..k {
            let ind = if data.w[i] == t { 1.0 } else { 0.0 };
            rows.push(ind);
            rows.extend(x.iter().map(|v| ind * v));
        }
    }
    let design = CoxDesign::new(
        Matrix::from_raw(data.n(), cols, rows),
        vec![0.0; data.n()],
        data.y.clone(),
        data.delta.clone().ok_or_else(|| DinaError::MissingColumn("delta".into()))?,
    )?;
    let coef = fit_cox_partial(&design, &FitOptions::default())?.coef;
    let mut out = Vec::with_capacity(k);
    let mut control = vec![0.0];
    control.extend_from_slice(&coef[..d]);
    out.push(FittedFunction::Linear(control));
    for t in 1..k {
        let base = d + (t - 1) * (d + 1);
        let mut c = vec![coef[base]];
        c.extend((0..d).map(|j| coef[j] + coef[base + 1 + j]));
        out.push(FittedFunction::Linear(c));
    }
    Ok(out)
}

pub type ProbFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Generalized propensity score: per-arm treatment probabilities.
#[derive(Clone)]
pub enum Propensity {
    /// Logit of treatment for two arms.
    Binary(FittedFunction),
    /// Multinomial logistic, coefficients over `[1, x]` for arms `1..K` (arm 0 is the reference).
    Multinomial(Vec<Vec<f64>>),
    /// One logit per arm, renormalized.
    OneVsRest(Vec<FittedFunction>),
    Custom { n_arms: usize, f: ProbFn },
}

impl fmt::Debug for Propensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Propensity::Binary(g) => write!(f, "Binary({g:?})"),
            Propensity::Multinomial(c) => write!(f, "Multinomial({c:?})"),
            Propensity::OneVsRest(g) => write!(f, "OneVsRest({g:?})"),
            Propensity::Custom { n_arms, .. } => write!(f, "Custom({n_arms} arms)"),
        }
    }
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
}

fn clip_renormalize(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|v| *v = clip_prob(*v));
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

impl Propensity {
    pub fn constant(e: f64) -> Self {
        Propensity::Binary(FittedFunction::Constant(crate::model::logit(e)))
    }

    /// Wraps a probability function `x ↦ P(W = 1 | x)` for two arms.
    pub fn binary_fn<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Propensity::Custom { n_arms: 2, f: Arc::new(move |x| { let e = f(x); vec![1.0 - e, e] }) }
    }

    pub fn n_arms(&self) -> usize {
        match self {
            Propensity::Binary(_) => 2,
            Propensity::Multinomial(c) => c.len() + 1,
            Propensity::OneVsRest(g) => g.len(),
            Propensity::Custom { n_arms, .. } => *n_arms,
        }
    }

    /// Clipped probabilities for every arm.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Propensity::Binary(g) => {
                let e = clip_prob(sigmoid(g.eval(x)));
                vec![1.0 - e, e]
            }
            Propensity::Multinomial(coef) => {
                let eta: Vec<f64> = coef.iter().map(|c| c[0] + dot(&c[1..], x)).collect();
                let m = eta.iter().fold(0.0_f64, |a, &b| a.max(b));
                let mut p = vec![(-m).exp()];
                p.extend(eta.iter().map(|e| (e - m).exp()));
                let s: f64 = p.iter().sum();
                clip_renormalize(p.into_iter().map(|v| v / s).collect())
            }
            Propensity::OneVsRest(g) => {
                let p: Vec<f64> = g.iter().map(|f| sigmoid(f.eval(x))).collect();
                let s: f64 = p.iter().sum();
                clip_renormalize(p.into_iter().map(|v| v / s).collect())
            }
            Propensity::Custom { n_arms, f } => {
                let p = f(x);
                debug_assert_eq!(p.len(), *n_arms);
                if *n_arms == 2 {
                    let e = clip_prob(p[1]);
                    vec![1.0 - e, e]
                } else {
                    clip_renormalize(p)
                }
            }
        }
    }

    /// `ê(x) = P(W = 1 | x)`.
    pub fn treated(&self, x: &[f64]) -> f64 {
        self.probs(x)[1]
    }
}

struct MultinomialObjective<'a> {
    design: &'a Matrix,
    w: &'a [usize],
    k: usize,
}

impl MultinomialObjective<'_> {
    fn probs(&self, row: &[f64], coef: &[f64], out: &mut [f64]) -> f64 {
        let p = row.len();
        let mut m = 0.0_f64;
        for t in 0..self.k {
            out[t] = dot(row, &coef[t * p..(t + 1) * p]);
            m = m.max(out[t]);
        }
        let mut s = (-m).exp();
        for v in out.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        out.iter_mut().for_each(|v| *v /= s);
        m + s.ln()
    }
}

impl Objective for MultinomialObjective<'_> {
    fn dim(&self) -> usize {
        self.k * self.design.cols()
    }

    fn value(&self, coef: &[f64]) -> f64 {
        let p = self.design.cols();
        let mut buf = vec![0.0; self.k];
        let mut v = 0.0;
        for (row, &w) in self.design.iter_rows().zip(self.w) {
            let lse = self.probs(row, coef, &mut buf);
            let eta = if w == 0 { 0.0 } else { dot(row, &coef[(w - 1) * p..w * p]) };
            v += eta - lse;
        }
        v / self.design.rows() as f64
    }

    fn derivatives(&self, coef: &[f64]) -> Derivatives {
        let p = self.design.cols();
        let dim = self.dim();
        let mut pi = vec![0.0; self.k];
        let mut value = 0.0;
        let mut gradient = vec![0.0; dim];
        let mut h = vec![0.0; dim * dim];
        let mut z = vec![0.0; dim];
        for (row, &w) in self.design.iter_rows().zip(self.w) {
            let lse = self.probs(row, coef, &mut pi);
            let eta = if w == 0 { 0.0 } else { dot(row, &coef[(w - 1) * p..w * p]) };
            value += eta - lse;
            for t in 0..self.k {
                let r = if w == t + 1 { 1.0 } else { 0.0 } - pi[t];
                for j in 0..p {
                    gradient[t * p + j] += r * row[j];
                }
            }
            // Σ = diag(π) − ππᵀ, expanded as Σ_t π_t z_t z_tᵀ − (Σ π_t z_t)(⋯)ᵀ
            for t in 0..self.k {
                z.iter_mut().for_each(|v| *v = 0.0);
                z[t * p..(t + 1) * p].copy_from_slice(row);
                add_outer(&mut h, &z, pi[t]);
            }
            z.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..self.k {
                for j in 0..p {
                    z[t * p + j] = pi[t] * row[j];
                }
            }
            add_outer(&mut h, &z, -1.0);
        }
        symmetrize(&mut h, dim);
        let n = self.design.rows() as f64;
        gradient.iter_mut().for_each(|g| *g /= n);
        h.iter_mut().for_each(|v| *v /= n);
        Derivatives { value: value / n, gradient, neg_hessian: h }
    }
}

/// Estimates `P(W = t | X = x)`, clipped to `[0.01, 0.99]`.
pub fn fit_propensity(spec: &LearnerSpec, x: &Matrix, w: &[usize], n_arms: usize) -> Result<Propensity> {
    spec.validate()?;
    if w.len() != x.rows() {
        return Err(DinaError::DimensionMismatch(format!("x has {} rows, w {}", x.rows(), w.len())));
    }
    let mut counts = vec![0usize; n_arms];
    for &a in w {
        if a >= n_arms {
            return Err(DinaError::InvalidArgument(format!("arm {a} >= n_arms {n_arms}")));
        }
        counts[a] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(DinaError::SingleClass(w.first().copied().unwrap_or(0)));
    }
    if let Some(arm) = counts.iter().position(|&c| c == 0) {
        return Err(DinaError::EmptyArm { arm });
    }
    let indicator = |t: usize| -> Vec<f64> { w.iter().map(|&a| if a == t { 1.0 } else { 0.0 }).collect() };
    match (spec, n_arms) {
        (_, 2) => Ok(Propensity::Binary(fit_learner(spec, &Family::Bernoulli, x, &indicator(1), None, None)?)),
        (LearnerSpec::Glm, k) => {
            let design = x.with_intercept();
            let obj = MultinomialObjective { design: &design, w, k: k - 1 };
            let p = design.cols();
            let sol = newton::maximize(&obj, vec![0.0; (k - 1) * p], &SolverOptions::default())?;
            Ok(Propensity::Multinomial(sol.coef.chunks(p).map(<[f64]>::to_vec).collect()))
        }
        (LearnerSpec::Boost(_), k) => Ok(Propensity::OneVsRest(
            (0..k)
                .map(|t| fit_learner(spec, &Family::Bernoulli, x, &indicator(t), None, None))
                .collect::<Result<_>>()?,
        )),
    }
}
