//! Cox proportional hazards: full likelihood with a known baseline, Breslow
//! partial likelihood, and probabilities of remaining uncensored.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{DinaError, Result};
use crate::glm::{add_outer, check_rank, symmetrize, FitOptions, GlmFit, GlmSpec};
use crate::model::{dot, sigmoid, BaselineHazard, Dataset, Family, Matrix};
use crate::newton::{self, Derivatives, Objective};
use crate::quadrature;

pub const P_UNCENSORED_MIN: f64 = 1e-3;
pub const P_UNCENSORED_MAX: f64 = 0.999;

#[derive(Debug, Clone)]
pub struct CoxDesign {
    pub design: Matrix,
    pub offset: Vec<f64>,
    pub times: Vec<f64>,
    pub events: Vec<u8>,
}

impl CoxDesign {
    pub fn new(design: Matrix, offset: Vec<f64>, times: Vec<f64>, events: Vec<u8>) -> Result<Self> {
        let n = design.rows();
        if offset.len() != n || times.len() != n || events.len() != n {
            return Err(DinaError::DimensionMismatch(format!(
                "design has {n} rows, offset {}, times {}, events {}",
                offset.len(),
                times.len(),
                events.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(DinaError::InvalidResponse { row: i, value: times[i], family: "cox".into() });
        }
        if let Some(i) = events.iter().position(|&e| e > 1) {
            return Err(DinaError::InvalidArgument(format!("row {i}: event indicator must be 0 or 1")));
        }
        Ok(Self { design, offset, times, events })
    }

    pub fn n(&self) -> usize {
        self.design.rows()
    }

    fn eta(&self, coef: &[f64]) -> Vec<f64> {
        self.design.iter_rows().zip(&self.offset).map(|(r, o)| o + dot(r, coef)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensoringMechanism {
    NoCensoring,
    /// Every unit censored at time `T`.
    SinglyCensored(f64),
    /// `C ~ U[0, T]`.
    UniformOn(f64),
    /// `P(C > c) = exp(−(rate·c)^shape)`.
    Weibull { rate: f64, shape: f64 },
}

impl CensoringMechanism {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CensoringMechanism::NoCensoring => true,
            CensoringMechanism::SinglyCensored(t) | CensoringMechanism::UniformOn(t) => t > 0.0 && t.is_finite(),
            CensoringMechanism::Weibull { rate, shape } => {
                rate > 0.0 && shape > 0.0 && rate.is_finite() && shape.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DinaError::InvalidArgument(format!("censoring parameters must be positive: {self:?}")))
        }
    }

    /// Draws a censoring time (`∞` without censoring).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CensoringMechanism::NoCensoring => f64::INFINITY,
            CensoringMechanism::SinglyCensored(t) => t,
            CensoringMechanism::UniformOn(t) => t * rng.gen::<f64>(),
            CensoringMechanism::Weibull { rate, shape } => {
                let e: f64 = Exp1.sample(rng);
                e.powf(1.0 / shape) / rate
            }
        }
    }

    /// The same mechanism with its scale parameter replaced.
    pub fn with_scale(&self, s: f64) -> Self {
        match *self {
            CensoringMechanism::NoCensoring => CensoringMechanism::NoCensoring,
            CensoringMechanism::SinglyCensored(_) => CensoringMechanism::SinglyCensored(s),
            CensoringMechanism::UniformOn(_) => CensoringMechanism::UniformOn(s),
            CensoringMechanism::Weibull { shape, .. } => CensoringMechanism::Weibull { rate: 1.0 / s, shape },
        }
    }

    /// Scale parameter: `T` for fixed/uniform censoring, `1/rate` for Weibull.
    pub fn scale(&self) -> Option<f64> {
        match *self {
            CensoringMechanism::NoCensoring => None,
            CensoringMechanism::SinglyCensored(t) | CensoringMechanism::UniformOn(t) => Some(t),
            CensoringMechanism::Weibull { rate, .. } => Some(1.0 / rate),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            CensoringMechanism::NoCensoring => "none".into(),
            CensoringMechanism::SinglyCensored(t) => format!("fixed:{t}"),
            CensoringMechanism::UniformOn(t) => format!("uniform:{t}"),
            CensoringMechanism::Weibull { rate, shape } => format!("weibull:{rate}:{shape}"),
        }
    }

    /// Parses `none`, `fixed:T`, `uniform:T`, `weibull:rate:shape`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>().map_err(|_| DinaError::Config(format!("bad number `{p}` in censoring `{s}`")))
        };
        let m = match parts.as_slice() {
            ["none"] => CensoringMechanism::NoCensoring,
            ["fixed", t] => CensoringMechanism::SinglyCensored(num(t)?),
            ["uniform", t] => CensoringMechanism::UniformOn(num(t)?),
            ["weibull", r, k] => CensoringMechanism::Weibull { rate: num(r)?, shape: num(k)? },
            _ => return Err(DinaError::Config(format!("unknown censoring `{s}`"))),
        };
        m.validate().map_err(|e| DinaError::Config(e.to_string()))?;
        Ok(m)
    }
}

struct FullObjective<'a> {
    design: &'a CoxDesign,
    cum_hazard: Vec<f64>,
}

impl Objective for FullObjective<'_> {
    fn dim(&self) -> usize {
        self.design.design.cols()
    }

    fn value(&self, coef: &[f64]) -> f64 {
        let d = self.design;
        let n = d.n() as f64;
        let mut v = 0.0;
        for (i, r) in d.design.iter_rows().enumerate() {
            let eta = d.offset[i] + dot(r, coef);
            v += f64::from(d.events[i]) * eta - self.cum_hazard[i] * eta.exp();
        }
        v / n
    }

    fn derivatives(&self, coef: &[f64]) -> Derivatives {
        let d = self.design;
        let p = self.dim();
        let n = d.n() as f64;
        let mut value = 0.0;
        let mut gradient = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for (i, r) in d.design.iter_rows().enumerate() {
            let eta = d.offset[i] + dot(r, coef);
            let m = self.cum_hazard[i] * eta.exp();
            let delta = f64::from(d.events[i]);
            value += delta * eta - m;
            for (g, x) in gradient.iter_mut().zip(r) {
                *g += (delta - m) * x;
            }
            add_outer(&mut h, r, m);
        }
        symmetrize(&mut h, p);
        gradient.iter_mut().for_each(|g| *g /= n);
        h.iter_mut().for_each(|v| *v /= n);
        Derivatives { value: value / n, gradient, neg_hessian: h }
    }
}

/// `(1/n) Σ Δᵢηᵢ − Λ(Yᵢ)e^{ηᵢ}`
pub fn cox_full_loglik(design: &CoxDesign, baseline: &BaselineHazard, coef: &[f64]) -> f64 {
    let obj = FullObjective { design, cum_hazard: design.times.iter().map(|&t| baseline.cum_hazard(t)).collect() };
    obj.value(coef)
}

pub fn fit_cox_full(design: &CoxDesign, baseline: &BaselineHazard, opts: &FitOptions) -> Result<GlmFit> {
    check_rank(&design.design, opts.ridge_fallback)?;
    let obj = FullObjective { design, cum_hazard: design.times.iter().map(|&t| baseline.cum_hazard(t)).collect() };
    let p = design.design.cols();
    let mut init = vec![0.0; p];
    if design.design.iter_rows().all(|r| r[0] == 1.0) {
        let events: f64 = design.events.iter().map(|&e| f64::from(e)).sum();
        let exposure: f64 = obj.cum_hazard.iter().zip(&design.offset).map(|(l, o)| l * o.exp()).sum();
        if events > 0.0 && exposure > 0.0 {
            init[0] = (events / exposure).ln();
        }
    }
    Ok(newton::maximize(&obj, init, &opts.solver)?.into())
}

struct PartialObjective<'a> {
    design: &'a CoxDesign,
    /// Row indices grouped by tied time, groups in descending time order.
    groups: Vec<Vec<usize>>,
}

impl<'a> PartialObjective<'a> {
    fn new(design: &'a CoxDesign) -> Result<Self> {
        if !design.events.iter().any(|&e| e == 1) {
            return Err(DinaError::NoEvents);
        }
        let mut order: Vec<usize> = (0..design.n()).collect();
        order.sort_by(|&a, &b| design.times[b].total_cmp(&design.times[a]).then(a.cmp(&b)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(g) if design.times[g[0]] == design.times[i] => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        Ok(Self { design, groups })
    }
}

impl Objective for PartialObjective<'_> {
    fn dim(&self) -> usize {
        self.design.design.cols()
    }

    fn value(&self, coef: &[f64]) -> f64 {
        let d = self.design;
        let eta = d.eta(coef);
        let mut m = f64::NEG_INFINITY;
        let mut s0 = 0.0;
        let mut v = 0.0;
        for g in &self.groups {
            for &j in g {
                if eta[j] > m {
                    s0 *= (m - eta[j]).exp();
                    m = eta[j];
                }
                s0 += (eta[j] - m).exp();
            }
            let log_risk = m + s0.ln();
            for &i in g {
                if d.events[i] == 1 {
                    v += eta[i] - log_risk;
                }
            }
        }
        v / d.n() as f64
    }

    fn derivatives(&self, coef: &[f64]) -> Derivatives {
        let d = self.design;
        let p = self.dim();
        let eta = d.eta(coef);
        let mut m = f64::NEG_INFINITY;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut value = 0.0;
        let mut gradient = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        let mut xbar = vec![0.0; p];
        for g in &self.groups {
            for &j in g {
                if eta[j] > m {
                    // running max keeps every risk-set sum representable
                    let r = (m - eta[j]).exp();
                    s0 *= r;
                    s1.iter_mut().for_each(|v| *v *= r);
                    s2.iter_mut().for_each(|v| *v *= r);
                    m = eta[j];
                }
                let w = (eta[j] - m).exp();
                let r = d.design.row(j);
                s0 += w;
                for (s, x) in s1.iter_mut().zip(r) {
                    *s += w * x;
                }
                add_outer(&mut s2, r, w);
            }
            let events = g.iter().filter(|&&i| d.events[i] == 1).count();
            if events == 0 {
                continue;
            }
            let k = events as f64;
            let log_risk = m + s0.ln();
            for (xb, s) in xbar.iter_mut().zip(&s1) {
                *xb = s / s0;
            }
            for &i in g {
                if d.events[i] == 1 {
                    value += eta[i] - log_risk;
                    for (gr, x) in gradient.iter_mut().zip(d.design.row(i)) {
                        *gr += x;
                    }
                }
            }
            for a in 0..p {
                gradient[a] -= k * xbar[a];
                for b in a..p {
                    h[a * p + b] += k * (s2[a * p + b] / s0 - xbar[a] * xbar[b]);
                }
            }
        }
        symmetrize(&mut h, p);
        let n = d.n() as f64;
        gradient.iter_mut().for_each(|g| *g /= n);
        h.iter_mut().for_each(|v| *v /= n);
        Derivatives { value: value / n, gradient, neg_hessian: h }
    }
}

/// `(1/n) Σ_{Δᵢ=1} ηᵢ − log Σ_{j: Yⱼ ≥ Yᵢ} e^{ηⱼ}` (Breslow ties).
pub fn cox_partial_loglik(design: &CoxDesign, coef: &[f64]) -> Result<f64> {
    Ok(PartialObjective::new(design)?.value(coef))
}

pub fn fit_cox_partial(design: &CoxDesign, opts: &FitOptions) -> Result<GlmFit> {
    let obj = PartialObjective::new(design)?;
    check_rank(&design.design, opts.ridge_fallback)?;
    let init = vec![0.0; design.design.cols()];
    Ok(newton::maximize(&obj, init, &opts.solver)?.into())
}

const WEIBULL_TAIL: f64 = 1e-10;
const QUAD_TOL: f64 = 1e-8;

/// `P(C ≥ Y)` for an event time with cumulative hazard `Λ(y)e^η`.
pub fn uncensored_prob(mechanism: &CensoringMechanism, baseline: &BaselineHazard, eta: f64) -> Result<f64> {
    mechanism.validate()?;
    let rate = eta.exp();
    let surv = |c: f64| (-baseline.cum_hazard(c) * rate).exp();
    match *mechanism {
        CensoringMechanism::NoCensoring => Ok(1.0),
        CensoringMechanism::SinglyCensored(t) => Ok(-(-baseline.cum_hazard(t) * rate).exp_m1()),
        CensoringMechanism::UniformOn(t) => {
            let integral = quadrature::integrate(surv, 0.0, t, QUAD_TOL * t)?;
            Ok((1.0 - integral / t).clamp(0.0, 1.0))
        }
        CensoringMechanism::Weibull { rate: r, shape: k } => {
            // u = (r·c)^k turns the Weibull density into e^{-u} du
            let upper = -WEIBULL_TAIL.ln();
            let integral =
                quadrature::integrate(|u: f64| (-u).exp() * surv(u.powf(1.0 / k) / r), 0.0, upper, QUAD_TOL)?;
            Ok((1.0 - integral).clamp(0.0, 1.0))
        }
    }
}

pub type UncensoredFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// Estimated `P(Δ = 1 | X = x, W = w)`.
#[derive(Clone)]
pub enum UncensoredModel {
    Constant(f64),
    PerArm(Vec<f64>),
    /// Logistic on `[1, x, 1{w=1}, …, 1{w=K}, 1{w=1}·x, …]`.
    Logistic { coef: Vec<f64>, n_arms: usize },
    Custom(UncensoredFn),
}

impl std::fmt::Debug for UncensoredModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UncensoredModel::Constant(p) => write!(f, "Constant({p})"),
            UncensoredModel::PerArm(p) => write!(f, "PerArm({p:?})"),
            UncensoredModel::Logistic { coef, n_arms } => write!(f, "Logistic({coef:?}, arms={n_arms})"),
            UncensoredModel::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn clip_unc(p: f64) -> f64 {
    p.clamp(P_UNCENSORED_MIN, P_UNCENSORED_MAX)
}

fn classifier_row(x: &[f64], w: usize, n_arms: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(x);
    for t in 1..n_arms {
        out.push(if w == t { 1.0 } else { 0.0 });
    }
    for t in 1..n_arms {
        let ind = if w == t { 1.0 } else { 0.0 };
        out.extend(x.iter().map(|v| ind * v));
    }
}

impl UncensoredModel {
    pub fn eval(&self, x: &[f64], w: usize) -> f64 {
        match self {
            UncensoredModel::Constant(p) => *p,
            UncensoredModel::PerArm(p) => p[w],
            UncensoredModel::Logistic { coef, n_arms } => {
                let mut row = Vec::with_capacity(coef.len());
                classifier_row(x, w, *n_arms, &mut row);
                clip_unc(sigmoid(dot(&row, coef)))
            }
            UncensoredModel::Custom(f) => f(x, w),
        }
    }
}

/// Logistic regression of `Δ` on treatment, covariates and their interactions.
pub fn estimate_uncensored_classifier(data: &Dataset) -> Result<UncensoredModel> {
    let delta = data.delta.as_ref().ok_or_else(|| DinaError::UnsupportedFamily {
        family: data.family.name().into(),
        reason: "censoring indicators are required".into(),
    })?;
    let n = data.n();
    let events = delta.iter().filter(|&&v| v == 1).count();
    if events == 0 || events == n {
        return Ok(UncensoredModel::Constant(clip_unc(events as f64 / n as f64)));
    }
    let k = data.n_arms;
    let mut rows = Vec::with_capacity(n * (1 + data.d()) * k);
    let mut buf = Vec::new();
    for i in 0..n {
        classifier_row(data.x.row(i), data.w[i], k, &mut buf);
        rows.extend_from_slice(&buf);
    }
    let design = Matrix::from_raw(n, buf.len(), rows);
    let y: Vec<f64> = delta.iter().map(|&v| f64::from(v)).collect();
    let spec = GlmSpec::new(Family::Bernoulli, design);
    match crate::glm::fit_glm(&spec, &y) {
        Ok(fit) => Ok(UncensoredModel::Logistic { coef: fit.coef, n_arms: k }),
        Err(DinaError::Separation { .. } | DinaError::NoConvergence { .. } | DinaError::RankDeficient { .. }) => {
            let mut p = Vec::with_capacity(k);
            for arm in 0..k {
                let idx = data.arm_indices(arm);
                let rate = if idx.is_empty() {
                    events as f64 / n as f64
                } else {
                    idx.iter().filter(|&&i| delta[i] == 1).count() as f64 / idx.len() as f64
                };
                p.push(clip_unc(rate));
            }
            Ok(UncensoredModel::PerArm(p))
        }
        Err(e) => Err(e),
    }
}
