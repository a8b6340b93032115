//! Blended nuisances and the cross-fitted two-stage DINA estimator.

pub mod diagnostics;

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::cox::{
    estimate_uncensored_classifier, fit_cox_full, fit_cox_partial, uncensored_prob, CensoringMechanism, CoxDesign,
    UncensoredModel,
};
use crate::error::{DinaError, Result};
use crate::glm::{fit_glm, FitOptions, GlmFit, GlmSpec};
use crate::learners::{fit_arm_outcomes, fit_learner, fit_propensity, FittedFunction, LearnerSpec, Propensity};
use crate::model::{dot, variance_unchecked, BaselineHazard, Dataset, Family, Matrix};
use crate::rng::{self, streams};

pub const BLEND_CLIP: f64 = 0.01;

/// Fitted nuisance functions from one training fold.
#[derive(Clone, Debug)]
pub struct NuisanceEstimates {
    pub propensity: Propensity,
    /// `η̂_w` for every arm.
    pub eta: Vec<FittedFunction>,
    /// `P̂(Δ = 1 | x, w)` for Cox families.
    pub uncensored: Option<UncensoredModel>,
    /// Direct regression of `Y` on `X`, used as `ν̂` when requested.
    pub mean_outcome: Option<FittedFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendRule {
    /// Variance- (or censoring-) weighted propensity.
    #[default]
    Dina,
    /// `a = e`, `ν = (1 − e)η₀ + eη₁`.
    RLearner,
}

/// How Cox blends obtain the arm-wise probabilities of being uncensored.
#[derive(Debug, Clone, Default)]
pub enum CensoringRoute {
    /// Classifier of `Δ` on `(x, w)`.
    #[default]
    Classifier,
    /// Closed form for a declared mechanism, with `η̂_w` plugged in.
    Known(CensoringMechanism),
}

#[derive(Debug, Clone)]
enum CoxWeights {
    Classifier,
    Known(CensoringMechanism, BaselineHazard),
    /// `p_t/p₀ ≈ e^{η̂_t − η̂₀}` under heavy censoring.
    HazardRatio,
}

/// Pointwise `(â, ν̂)`. `a` holds one component per treated arm.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendPoint {
    pub a: Vec<f64>,
    pub nu: f64,
}

/// The derived functions `â(x)`, `ν̂(x)` for the second stage.
#[derive(Clone, Debug)]
pub struct BlendedNuisance {
    pub family: Family,
    pub nuisance: NuisanceEstimates,
    pub rule: BlendRule,
    cox: Option<CoxWeights>,
}

/// `a_t = e_t I_t / Σ_s e_s I_s` for treated arms `t ≥ 1`, clipped so that
/// every component and `a₀ = 1 − Σ a_t` stay inside `[0.01, 0.99]`;
/// `ν = Σ a_t η_t`.
pub fn blend_weights(e: &[f64], info: &[f64], eta: &[f64]) -> BlendPoint {
    let k = e.len();
    let mut a: Vec<f64> = if info.windows(2).all(|w| w[0] == w[1]) {
        e[1..].to_vec()
    } else {
        let total: f64 = e.iter().zip(info).map(|(e, v)| e * v).sum();
        (1..k).map(|t| e[t] * info[t] / total).collect()
    };
    a.iter_mut().for_each(|v| *v = v.clamp(BLEND_CLIP, 1.0 - BLEND_CLIP));
    let s: f64 = a.iter().sum();
    if s > 1.0 - BLEND_CLIP {
        let r = (1.0 - BLEND_CLIP) / s;
        a.iter_mut().for_each(|v| *v *= r);
    }
    let a0 = 1.0 - a.iter().sum::<f64>();
    let nu = a0 * eta[0] + a.iter().zip(&eta[1..]).map(|(a, h)| a * h).sum::<f64>();
    BlendPoint { a, nu }
}

/// Two-arm exponential-family blend at a point.
pub fn blend_exponential_at(family: &Family, e: f64, eta0: f64, eta1: f64) -> BlendPoint {
    let v = [variance_unchecked(family, eta0), variance_unchecked(family, eta1)];
    blend_weights(&[1.0 - e, e], &v, &[eta0, eta1])
}

/// Two-arm Cox blend at a point from the uncensored probabilities.
pub fn blend_cox_at(e: f64, eta0: f64, eta1: f64, p0: f64, p1: f64) -> BlendPoint {
    blend_weights(&[1.0 - e, e], &[p0, p1], &[eta0, eta1])
}

/// Multi-arm exponential-family blend at a point.
pub fn blend_multi_at(family: &Family, e: &[f64], eta: &[f64]) -> BlendPoint {
    let v: Vec<f64> = eta.iter().map(|&h| variance_unchecked(family, h)).collect();
    blend_weights(e, &v, eta)
}

fn require_exponential(family: &Family) -> Result<()> {
    if family.is_cox() {
        return Err(DinaError::UnsupportedFamily {
            family: family.name().into(),
            reason: "use the Cox blend".into(),
        });
    }
    Ok(())
}

pub fn blend_exponential(
    family: &Family,
    e: Propensity,
    eta0: FittedFunction,
    eta1: FittedFunction,
) -> Result<BlendedNuisance> {
    require_exponential(family)?;
    let nuisance = NuisanceEstimates { propensity: e, eta: vec![eta0, eta1], uncensored: None, mean_outcome: None };
    BlendedNuisance::new(family.clone(), nuisance, BlendRule::Dina, None)
}

pub fn blend_cox(
    family: &Family,
    e: Propensity,
    eta0: FittedFunction,
    eta1: FittedFunction,
    uncensored: UncensoredModel,
) -> Result<BlendedNuisance> {
    let nuisance =
        NuisanceEstimates { propensity: e, eta: vec![eta0, eta1], uncensored: Some(uncensored), mean_outcome: None };
    BlendedNuisance::new(family.clone(), nuisance, BlendRule::Dina, None)
}

pub fn blend_multi(family: &Family, e: Propensity, eta: Vec<FittedFunction>) -> Result<BlendedNuisance> {
    require_exponential(family)?;
    let nuisance = NuisanceEstimates { propensity: e, eta, uncensored: None, mean_outcome: None };
    BlendedNuisance::new(family.clone(), nuisance, BlendRule::Dina, None)
}

impl BlendedNuisance {
    fn new(
        family: Family,
        nuisance: NuisanceEstimates,
        rule: BlendRule,
        censored_fraction: Option<(f64, &DinaOptions)>,
    ) -> Result<Self> {
        let k = nuisance.propensity.n_arms();
        if nuisance.eta.len() != k {
            return Err(DinaError::DimensionMismatch(format!(
                "{} outcome functions for {k} arms",
                nuisance.eta.len()
            )));
        }
        let cox = if family.is_cox() {
            let route = censored_fraction.map(|(_, o)| o.censoring.clone()).unwrap_or_default();
            let heavy = censored_fraction.map_or(false, |(f, o)| o.heavy_censoring_shortcut && f > 0.95);
            Some(if heavy {
                CoxWeights::HazardRatio
            } else {
                match route {
                    CensoringRoute::Classifier => {
                        if nuisance.uncensored.is_none() {
                            return Err(DinaError::InvalidArgument(
                                "Cox blend needs uncensored-probability estimates".into(),
                            ));
                        }
                        CoxWeights::Classifier
                    }
                    CensoringRoute::Known(m) => {
                        m.validate()?;
                        let b = family.baseline().cloned().ok_or_else(|| DinaError::UnsupportedFamily {
                            family: family.name().into(),
                            reason: "known censoring needs a baseline hazard".into(),
                        })?;
                        CoxWeights::Known(m, b)
                    }
                }
            })
        } else {
            None
        };
        Ok(Self { family, nuisance, rule, cox })
    }

    pub fn n_arms(&self) -> usize {
        self.nuisance.eta.len()
    }

    pub fn at(&self, x: &[f64]) -> BlendPoint {
        let e = self.nuisance.propensity.probs(x);
        let eta: Vec<f64> = self.nuisance.eta.iter().map(|f| f.eval(x)).collect();
        let mut point = match (self.rule, &self.cox) {
            (BlendRule::RLearner, _) => blend_weights(&e, &vec![1.0; e.len()], &eta),
            (BlendRule::Dina, None) => blend_multi_at(&self.family, &e, &eta),
            (BlendRule::Dina, Some(w)) => {
                let p: Vec<f64> = (0..e.len())
                    .map(|t| match w {
                        CoxWeights::Classifier => {
                            self.nuisance.uncensored.as_ref().expect("checked at construction").eval(x, t)
                        }
                        CoxWeights::Known(m, b) => uncensored_prob(m, b, eta[t]).unwrap_or(1.0).max(1e-12),
                        CoxWeights::HazardRatio => (eta[t] - eta[0]).exp(),
                    })
                    .collect();
                blend_weights(&e, &p, &eta)
            }
        };
        if let Some(m) = &self.nuisance.mean_outcome {
            if matches!(self.family, Family::Gaussian { .. }) && self.n_arms() == 2 {
                point = BlendPoint { a: vec![e[1]], nu: m.eval(x) };
            }
        }
        point
    }

    /// `â(x)` for two arms.
    pub fn a_hat(&self, x: &[f64]) -> f64 {
        self.at(x).a[0]
    }

    pub fn nu_hat(&self, x: &[f64]) -> f64 {
        self.at(x).nu
    }
}

pub type NuisanceProvider = Arc<dyn Fn(&Dataset) -> Result<NuisanceEstimates> + Send + Sync>;

#[derive(Clone)]
pub struct DinaOptions {
    pub seed: u64,
    pub rule: BlendRule,
    pub censoring: CensoringRoute,
    /// Replace the uncensored-probability ratio by `e^{τ̂}` above 95% censoring.
    pub heavy_censoring_shortcut: bool,
    /// Gaussian only: estimate `ν̂` by one regression of `Y` on `X`.
    pub gaussian_direct_nu: bool,
    /// Known propensity used instead of a fitted one.
    pub propensity: Option<Propensity>,
    /// Replaces nuisance fitting entirely (oracle or perturbed nuisances).
    pub nuisance: Option<NuisanceProvider>,
    pub fit: FitOptions,
}

impl Default for DinaOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rule: BlendRule::Dina,
            censoring: CensoringRoute::Classifier,
            heavy_censoring_shortcut: false,
            gaussian_direct_nu: false,
            propensity: None,
            nuisance: None,
            fit: FitOptions::default().with_ridge_fallback(true),
        }
    }
}

impl fmt::Debug for DinaOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DinaOptions")
            .field("seed", &self.seed)
            .field("rule", &self.rule)
            .field("censoring", &self.censoring)
            .field("heavy_censoring_shortcut", &self.heavy_censoring_shortcut)
            .field("gaussian_direct_nu", &self.gaussian_direct_nu)
            .field("propensity", &self.propensity.is_some())
            .field("nuisance", &self.nuisance.is_some())
            .finish()
    }
}

impl DinaOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rule(mut self, rule: BlendRule) -> Self {
        self.rule = rule;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dina,
    E,
    Se,
    X,
    Pax,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Dina, Method::E, Method::Se, Method::X, Method::Pax];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dina => "dina",
            Method::E => "e",
            Method::Se => "se",
            Method::X => "x",
            Method::Pax => "pax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dina" => Ok(Method::Dina),
            "e" | "r" | "rlearner" => Ok(Method::E),
            "se" => Ok(Method::Se),
            "x" => Ok(Method::X),
            "pax" | "pa-x" => Ok(Method::Pax),
            other => Err(DinaError::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub ridge_used: bool,
}

impl From<(usize, &GlmFit)> for FoldDiagnostics {
    fn from((fold, f): (usize, &GlmFit)) -> Self {
        FoldDiagnostics {
            fold,
            converged: f.converged,
            iterations: f.iterations,
            final_gradient_norm: f.final_gradient_norm,
            ridge_used: f.ridge_used,
        }
    }
}

/// Estimated `τ(x) = β₀ + xᵀβ`, stacked per treated arm.
#[derive(Debug, Clone)]
pub struct DinaFit {
    pub beta: Vec<f64>,
    pub fold_estimates: Vec<Vec<f64>>,
    pub diagnostics: Vec<FoldDiagnostics>,
    pub family: Family,
    pub method: Method,
    pub n_arms: usize,
}

impl DinaFit {
    pub fn d(&self) -> usize {
        self.beta.len() / (self.n_arms - 1) - 1
    }

    /// Coefficients `[β₀, β]` of treated arm `t ≥ 1`.
    pub fn arm_beta(&self, t: usize) -> &[f64] {
        let p = self.d() + 1;
        &self.beta[(t - 1) * p..t * p]
    }

    /// `τ̂(x)` for the first treated arm.
    pub fn tau(&self, x: &[f64]) -> f64 {
        let b = self.arm_beta(1);
        b[0] + dot(&b[1..], x)
    }
}

/// `τ̂_t(x)` for every treated arm.
pub fn tau_at(fit: &DinaFit, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != fit.d() {
        return Err(DinaError::DimensionMismatch(format!("x has {} entries, model {}", x.len(), fit.d())));
    }
    Ok((1..fit.n_arms).map(|t| {
        let b = fit.arm_beta(t);
        b[0] + dot(&b[1..], x)
    }).collect())
}

/// Rows of the second-stage design `(1{W=t} − â_t(x))·[1, x]` and offsets `ν̂(x)`.
pub fn second_stage_design(data: &Dataset, blend: &BlendedNuisance) -> (Matrix, Vec<f64>) {
    let d = data.d();
    let k = data.n_arms - 1;
    let cols = k * (d + 1);
    let mut rows = Vec::with_capacity(data.n() * cols);
    let mut offset = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let x = data.x.row(i);
        let p = blend.at(x);
        for t in 1..=k {
            let r = if data.w[i] == t { 1.0 } else { 0.0 } - p.a[t - 1];
            rows.push(r);
            rows.extend(x.iter().map(|v| r * v));
        }
        offset.push(p.nu);
    }
    (Matrix::from_raw(data.n(), cols, rows), offset)
}

/// Maximizes the second-stage likelihood on `data` with `(â, ν̂)` plugged in.
pub fn second_stage(data: &Dataset, blend: &BlendedNuisance, opts: &FitOptions) -> Result<GlmFit> {
    let (design, offset) = second_stage_design(data, blend);
    match &data.family {
        Family::CoxFull(b) => {
            let cd = CoxDesign::new(design, offset, data.y.clone(), data.delta.clone().unwrap_or_default())?;
            fit_cox_full(&cd, b, opts)
        }
        Family::CoxPartial => {
            let cd = CoxDesign::new(design, offset, data.y.clone(), data.delta.clone().unwrap_or_default())?;
            fit_cox_partial(&cd, opts)
        }
        fam => {
            let mut spec = GlmSpec::new(fam.clone(), design).with_offset(offset).with_ridge_fallback(opts.ridge_fallback);
            spec.max_iter = opts.solver.max_iter;
            spec.tol = opts.solver.tol;
            fit_glm(&spec, &data.y)
        }
    }
}

/// Seeded split into two folds of sizes `⌈n/2⌉` and `⌊n/2⌋`.
pub fn fold_split(n: usize, seed: u64) -> [Vec<usize>; 2] {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, streams::FOLDS));
    let second = perm.split_off(n.div_ceil(2));
    [perm, second]
}

/// Fits every nuisance on a training fold.
pub fn fit_nuisances(
    train: &Dataset,
    propensity_spec: &LearnerSpec,
    outcome_spec: &LearnerSpec,
    options: &DinaOptions,
) -> Result<NuisanceEstimates> {
    if let Some(provider) = &options.nuisance {
        return provider(train);
    }
    let propensity = match &options.propensity {
        Some(p) => p.clone(),
        None => fit_propensity(propensity_spec, &train.x, &train.w, train.n_arms)?,
    };
    let eta = fit_arm_outcomes(outcome_spec, train)?;
    let uncensored = match (&train.family, &options.censoring) {
        (f, CensoringRoute::Classifier) if f.is_cox() => Some(estimate_uncensored_classifier(train)?),
        _ => None,
    };
    let mean_outcome = if options.gaussian_direct_nu && matches!(train.family, Family::Gaussian { .. }) {
        Some(fit_learner(outcome_spec, &train.family, &train.x, &train.y, None, None)?)
    } else {
        None
    };
    Ok(NuisanceEstimates { propensity, eta, uncensored, mean_outcome })
}

fn check_size(data: &Dataset) -> Result<()> {
    let min = 2 * (data.d() + 2);
    if data.n() < min {
        return Err(DinaError::InvalidArgument(format!("need at least {min} rows, got {}", data.n())));
    }
    Ok(())
}

/// Cross-fitted DINA (or, with `BlendRule::RLearner`, the E-learner).
pub fn fit_dina(
    data: &Dataset,
    propensity_spec: &LearnerSpec,
    outcome_spec: &LearnerSpec,
    options: &DinaOptions,
) -> Result<DinaFit> {
    check_size(data)?;
    let folds = fold_split(data.n(), options.seed);
    let mut estimates = Vec::with_capacity(2);
    let mut diagnostics = Vec::with_capacity(2);
    for fold in 0..2 {
        let train = data.subset(&folds[fold]);
        let eval = data.subset(&folds[1 - fold]);
        let run = || -> Result<GlmFit> {
            let nuisance = fit_nuisances(&train, propensity_spec, outcome_spec, options)?;
            let frac = train.censored_fraction().unwrap_or(0.0);
            let blend = BlendedNuisance::new(data.family.clone(), nuisance, options.rule, Some((frac, options)))?;
            second_stage(&eval, &blend, &options.fit)
        };
        let fit = run().map_err(|e| DinaError::Fold { fold, source: Box::new(e) })?;
        diagnostics.push(FoldDiagnostics::from((fold, &fit)));
        estimates.push(fit.coef);
    }
    let beta = estimates[0].iter().zip(&estimates[1]).map(|(a, b)| (a + b) / 2.0).collect();
    let method = match options.rule {
        BlendRule::Dina => Method::Dina,
        BlendRule::RLearner => Method::E,
    };
    Ok(DinaFit { beta, fold_estimates: estimates, diagnostics, family: data.family.clone(), method, n_arms: data.n_arms })
}

/// Builds a blend from fixed nuisances, for oracle studies.
pub fn blend_nuisances(
    family: &Family,
    nuisance: NuisanceEstimates,
    rule: BlendRule,
    options: &DinaOptions,
) -> Result<BlendedNuisance> {
    BlendedNuisance::new(family.clone(), nuisance, rule, Some((0.0, options)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn approx_vec(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn gaussian_blend_is_propensity() {
        for e in [0.01, 0.3, 0.7, 0.99] {
            let p = blend_exponential_at(&Family::gaussian(), e, -1.3, 2.2);
            assert_eq!(p.a[0], e);
        }
    }

    #[test]
    fn bernoulli_blend_examples() {
        let p = blend_exponential_at(&Family::Bernoulli, 0.7, 0.0, 0.0);
        assert_eq!(p.a[0], 0.7);
        let p = blend_exponential_at(&Family::Bernoulli, 0.5, 0.0, 3f64.ln());
        assert_relative_eq!(p.a[0], 3.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(p.nu, 3.0 / 7.0 * 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn cox_blend_examples() {
        assert_eq!(blend_cox_at(0.3, 0.1, 0.9, 0.4, 0.4).a[0], 0.3);
        assert_relative_eq!(blend_cox_at(0.5, 0.0, 0.0, 0.3, 0.6).a[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn multi_blend_examples() {
        let p = blend_multi_at(&Family::Poisson, &[0.2, 0.3, 0.5], &[0.0, 2f64.ln(), 4f64.ln()]);
        approx_vec(&p.a, &[3.0 / 14.0, 10.0 / 14.0], 1e-15);
        assert_relative_eq!(1.0 - p.a.iter().sum::<f64>(), 1.0 / 14.0, epsilon = 1e-15);
        let q = blend_multi_at(&Family::Bernoulli, &[0.25; 4], &[0.4; 4]);
        approx_vec(&q.a, &[0.25; 3], 1e-15);
        assert_relative_eq!(q.nu, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn logit_identity() {
        for fam in [Family::Bernoulli, Family::Poisson] {
            for &(e, h0, h1) in &[(0.3, -0.4, 0.9), (0.8, 1.2, -0.5), (0.55, 0.0, 2.0)] {
                let a = blend_exponential_at(&fam, e, h0, h1).a[0];
                let lhs = (a / (1.0 - a)).ln();
                let v = |h| variance_unchecked(&fam, h);
                let rhs = (e / (1.0 - e)).ln() + (v(h1) / v(h0)).ln();
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn blend_is_clipped() {
        let p = blend_exponential_at(&Family::Poisson, 0.99, -5.0, 5.0);
        assert_eq!(p.a[0], 0.99);
        let p = blend_multi_at(&Family::Poisson, &[0.01, 0.01, 0.98], &[-5.0, 0.0, 5.0]);
        assert!(1.0 - p.a.iter().sum::<f64>() >= BLEND_CLIP - 1e-15);
    }

    #[test]
    fn folds_partition_rows() {
        let [a, b] = fold_split(11, 3);
        assert_eq!((a.len(), b.len()), (6, 5));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(fold_split(11, 3), [a, b]);
    }

    #[test]
    fn tau_examples() {
        let fit = DinaFit {
            beta: vec![1.0, 2.0],
            fold_estimates: vec![],
            diagnostics: vec![],
            family: Family::Poisson,
            method: Method::Dina,
            n_arms: 2,
        };
        assert_eq!(tau_at(&fit, &[3.0]).unwrap(), vec![7.0]);
        assert!(tau_at(&fit, &[3.0, 1.0]).is_err());
        let zero = DinaFit { beta: vec![0.0, 0.0], ..fit.clone() };
        assert_eq!(zero.tau(&[5.0]), 0.0);
        let multi = DinaFit { beta: vec![0.5, 1.0, 0.5, 1.0], n_arms: 3, ..fit };
        let t = tau_at(&multi, &[2.0]).unwrap();
        assert_eq!(t[0], t[1]);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("t-learner").is_err());
    }
}
